"""Accuracy / latency predictor unit tests."""

import numpy as np
import pytest

from viewsched.branches import default_device_profile
from viewsched.core import NUM_CATEGORIES, DistributionVector
from viewsched.predictors import (
    FEATURE_WIDTH,
    GBRTModel,
    GBRTParams,
    LinearLatencyModel,
    PerformanceModels,
    accuracy_features,
    fit_update_latency,
    predict_accuracy,
    predict_frame_latency,
    train_gbrt,
)


def one_hot_dist(bin_index):
    v = np.zeros(NUM_CATEGORIES)
    v[bin_index] = 1.0
    return DistributionVector(v)


# -- feature layout -----------------------------------------------------------


def test_feature_vector_layout():
    d = one_hot_dist(7)
    f = accuracy_features(d, branch_index=3, mean_track_confidence=0.6)
    assert f.shape == (FEATURE_WIDTH,)
    assert FEATURE_WIDTH == NUM_CATEGORIES + 17 + 1
    assert f[7] == 1.0 and f[:NUM_CATEGORIES].sum() == 1.0
    assert f[NUM_CATEGORIES + 3] == 1.0
    assert f[NUM_CATEGORIES:NUM_CATEGORIES + 17].sum() == 1.0
    # confidence slot is zero for detection branches
    assert f[-1] == 0.0


def test_confidence_slot_only_for_tracker():
    d = one_hot_dist(0)
    tracker_feats = accuracy_features(d, branch_index=0, mean_track_confidence=0.42)
    assert tracker_feats[-1] == pytest.approx(0.42)
    det_feats = accuracy_features(d, branch_index=5, mean_track_confidence=0.42)
    assert det_feats[-1] == 0.0


def test_feature_branch_index_validated():
    d = one_hot_dist(0)
    with pytest.raises(ValueError):
        accuracy_features(d, branch_index=17)
    with pytest.raises(ValueError):
        accuracy_features(d, branch_index=-1)


# -- gradient-boosted trees ---------------------------------------------------


def test_gbrt_recovers_linear_single_feature_target():
    rng = np.random.default_rng(3)
    n = 400
    x = rng.uniform(0.0, 1.0, size=(n, 6))
    y = 0.15 + 0.7 * x[:, 2]  # linear in one feature, inside [0, 1]
    model = train_gbrt(x, y, GBRTParams(rounds=80, max_depth=3, learning_rate=0.1,
                                        min_samples_leaf=5))
    pred = model.predict_batch(x)
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    assert 1.0 - ss_res / ss_tot >= 0.95


def test_gbrt_is_deterministic():
    rng = np.random.default_rng(11)
    x = rng.uniform(0.0, 1.0, size=(120, 4))
    y = np.clip(0.3 + 0.4 * x[:, 0] - 0.2 * x[:, 1], 0.0, 1.0)
    a = train_gbrt(x, y, GBRTParams(rounds=20))
    b = train_gbrt(x, y, GBRTParams(rounds=20))
    assert a.to_dict() == b.to_dict()


def test_gbrt_predictions_clamped_to_unit_interval():
    # constant-extrapolation plus clamping: nothing leaves [0, 1]
    x = np.array([[0.0], [0.2], [0.8], [1.0]])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    model = train_gbrt(x, y, GBRTParams(rounds=200, learning_rate=0.5,
                                        min_samples_leaf=1))
    probe = np.array([[-5.0], [0.5], [5.0]])
    out = model.predict_batch(probe)
    assert np.all(out >= 0.0) and np.all(out <= 1.0)


def test_gbrt_training_loss_is_monotone_enough():
    rng = np.random.default_rng(7)
    x = rng.uniform(0.0, 1.0, size=(300, 5))
    y = np.clip(0.5 + 0.3 * np.sin(4 * x[:, 0]) * x[:, 1], 0.0, 1.0)
    model = train_gbrt(x, y, GBRTParams(rounds=50))
    trace = model.training_mse
    assert len(trace) == 50
    assert trace[-1] < trace[0]


def test_gbrt_input_validation():
    x = np.zeros((10, 3))
    with pytest.raises(ValueError):
        train_gbrt(x, np.full(10, 1.5))  # target outside [0, 1]
    with pytest.raises(ValueError):
        train_gbrt(np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(ValueError):
        train_gbrt(x, np.zeros(9))


def test_gbrt_round_trip_preserves_predictions():
    rng = np.random.default_rng(19)
    x = rng.uniform(0.0, 1.0, size=(150, FEATURE_WIDTH))
    y = np.clip(0.2 + 0.5 * x[:, 0], 0.0, 1.0)
    model = train_gbrt(x, y, GBRTParams(rounds=15))
    clone = GBRTModel.from_dict(model.to_dict())
    probe = rng.uniform(0.0, 1.0, size=(40, FEATURE_WIDTH))
    assert np.array_equal(model.predict_batch(probe), clone.predict_batch(probe))
    assert predict_accuracy(model, probe[0]) == predict_accuracy(clone, probe[0])


# -- update-latency model -----------------------------------------------------


def test_ols_recovers_noiseless_line_exactly():
    counts = np.arange(0, 25)
    lats = 0.5 + 0.035 * counts
    model = fit_update_latency(counts, lats)
    assert model.intercept_ms == pytest.approx(0.5, abs=1e-9)
    assert model.slope_ms_per_track == pytest.approx(0.035, abs=1e-9)
    assert model.predict(12) == pytest.approx(0.5 + 0.035 * 12, abs=1e-9)


def test_ols_clamps_negative_coefficients():
    counts = np.array([0, 1, 2, 3])
    lats = np.array([1.0, 0.8, 0.6, 0.4])  # negative slope is unphysical
    model = fit_update_latency(counts, lats)
    assert model.slope_ms_per_track == 0.0


def test_ols_needs_two_distinct_counts():
    with pytest.raises(ValueError):
        fit_update_latency([5, 5, 5], [1.0, 1.1, 0.9])


def test_linear_latency_round_trip():
    m = LinearLatencyModel(slope_ms_per_track=0.04, intercept_ms=0.9)
    clone = LinearLatencyModel.from_dict(m.to_dict())
    assert clone.predict(7) == m.predict(7)


# -- frame latency prediction --------------------------------------------------


def test_predict_frame_latency_matches_hand_computation():
    device = default_device_profile()
    update = LinearLatencyModel(slope_ms_per_track=0.05, intercept_ms=1.0)
    from viewsched.branches import branch_latency, enumerate_branches, fixed_latency

    catalog = enumerate_branches()
    # three views on branch 1, two on tracker, one on branch 5
    assignment = [1, 1, 1, 0, 0, 5]
    got = predict_frame_latency(assignment, device, update, track_count=8)
    want = (
        fixed_latency(device)
        + 3 * branch_latency(catalog[1], device)
        + branch_latency(catalog[5], device)
        + 1.0 + 0.05 * 8
    )
    assert got == pytest.approx(want, abs=1e-12)


def test_predict_frame_latency_batching_discount():
    device = default_device_profile()
    update = LinearLatencyModel(0.0, 0.0)
    from viewsched.branches import branch_latency, enumerate_branches, fixed_latency

    catalog = enumerate_branches()
    assignment = [2, 2, 2, 2, 2, 2]
    full = predict_frame_latency(assignment, device, update, 0, alpha=1.0)
    discounted = predict_frame_latency(assignment, device, update, 0, alpha=0.5)
    lat = branch_latency(catalog[2], device)
    assert full == pytest.approx(fixed_latency(device) + 6 * lat)
    assert discounted == pytest.approx(fixed_latency(device) + lat * (1 + 0.5 * 5))


# -- bundle --------------------------------------------------------------------


def test_performance_models_save_load(tmp_path):
    rng = np.random.default_rng(23)
    x = rng.uniform(0.0, 1.0, size=(80, FEATURE_WIDTH))
    y = np.clip(0.1 + 0.6 * x[:, 1], 0.0, 1.0)
    bundle = PerformanceModels(
        accuracy=train_gbrt(x, y, GBRTParams(rounds=10)),
        update_latency=LinearLatencyModel(0.03, 0.8),
    )
    path = tmp_path / "models.json"
    bundle.save(str(path), training_info={"samples": 80})
    loaded = PerformanceModels.load(str(path))
    probe = rng.uniform(0.0, 1.0, size=(10, FEATURE_WIDTH))
    assert np.array_equal(bundle.accuracy.predict_batch(probe),
                          loaded.accuracy.predict_batch(probe))
    assert loaded.update_latency.predict(4) == bundle.update_latency.predict(4)
