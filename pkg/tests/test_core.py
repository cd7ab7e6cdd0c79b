"""Geometry, category grid, and frame-transform unit tests."""

import math

import numpy as np
import pytest

from viewsched.core import (
    DISTANCE_EDGES_M,
    NUM_CATEGORIES,
    SIZE_EDGES_M3,
    VELOCITY_EDGES_MPS,
    Box3D,
    CameraRig,
    CategoryLevel,
    DistributionVector,
    EgoPose,
    ObjectClass,
    box_to_ego,
    box_to_global,
    categorize,
    distribution,
    ego_transform,
    view_of,
    wrap_angle,
)


def make_box(x=0.0, y=0.0, z=0.0, vx=0.0, vy=0.0, vz=0.0,
             w=1.9, h=1.6, l=4.5, yaw=0.0, cls=ObjectClass.CAR, conf=1.0):
    return Box3D(center=(x, y, z), size=(w, h, l), velocity=(vx, vy, vz),
                 yaw=yaw, cls=cls, confidence=conf)


# -- angles and boxes ---------------------------------------------------------


def test_wrap_angle_range_and_fixed_points():
    assert wrap_angle(0.0) == 0.0
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)  # (-pi, pi]: -pi maps up
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-0.5) == pytest.approx(-0.5)
    for a in np.linspace(-20, 20, 401):
        w = wrap_angle(float(a))
        assert -math.pi < w <= math.pi + 1e-12
        # same direction: difference is a multiple of 2*pi
        k = (a - w) / (2 * math.pi)
        assert abs(k - round(k)) < 1e-9


def test_box_derived_quantities():
    b = make_box(x=3.0, y=4.0, z=10.0, vx=0.3, vy=0.4, vz=9.0, w=2.0, h=3.0, l=4.0)
    assert b.planar_distance == pytest.approx(5.0)  # z ignored
    assert b.planar_speed == pytest.approx(0.5)  # vz ignored
    assert b.volume == pytest.approx(24.0)


def test_box_validation():
    with pytest.raises(ValueError):
        make_box(w=0.0)
    with pytest.raises(ValueError):
        make_box(conf=1.5)


# -- camera rig ---------------------------------------------------------------


def test_default_rig_covers_the_full_circle():
    rig = CameraRig.default()
    assert rig.view_count == 6
    widths = [wrap_angle(hi - lo) if hi > lo else hi - lo + 2 * math.pi
              for lo, hi in rig.sectors]
    total = sum(w if w > 0 else w + 2 * math.pi for w in widths)
    assert total == pytest.approx(2 * math.pi)
    # every angle lands in exactly one view
    for a in np.linspace(-math.pi + 1e-6, math.pi, 720):
        views = [rig.view_of_angle(float(a))]
        assert 0 <= views[0] < 6


def test_view_of_uses_planar_angle():
    rig = CameraRig.default()
    # straight ahead is the front view; directly behind is a different view
    front = view_of((10.0, 0.0, 0.0), rig)
    back = view_of((-10.0, 0.0, 0.0), rig)
    assert front != back
    # z must not matter
    assert view_of((10.0, 0.0, 5.0), rig) == front


def test_view_of_angle_is_stable_on_sector_edges():
    rig = CameraRig.default()
    for lo, hi in rig.sectors:
        v_lo = rig.view_of_angle(lo)
        v_hi = rig.view_of_angle(hi)
        assert 0 <= v_lo < rig.view_count
        assert 0 <= v_hi < rig.view_count
        # an edge belongs to exactly one of its two sectors, deterministically
        assert rig.view_of_angle(lo) == v_lo


# -- category grid ------------------------------------------------------------


def test_category_edges_are_half_open_upward():
    # distance exactly on an edge goes to the higher level
    b = make_box(x=DISTANCE_EDGES_M[0], y=0.0)
    assert categorize(b).distance_level == 1
    b = make_box(x=DISTANCE_EDGES_M[0] - 1e-9)
    assert categorize(b).distance_level == 0
    b = make_box(x=5.0, vx=VELOCITY_EDGES_MPS[0])
    assert categorize(b).velocity_level == 1
    # size: volume exactly on an edge
    b = make_box(x=5.0, w=1.0, h=1.0, l=SIZE_EDGES_M3[1])
    assert categorize(b).size_level == 2


def test_category_levels_span_the_grid():
    far_fast_big = make_box(x=100.0, vx=50.0, w=3.0, h=3.0, l=12.0)
    lv = categorize(far_fast_big)
    assert (lv.distance_level, lv.velocity_level, lv.size_level) == (4, 3, 3)
    assert lv.index == NUM_CATEGORIES - 1


def test_category_index_layout_distance_fastest():
    assert CategoryLevel(0, 0, 0).index == 0
    assert CategoryLevel(1, 0, 0).index == 1
    assert CategoryLevel(0, 1, 0).index == 5
    assert CategoryLevel(0, 0, 1).index == 20
    # bijective over the whole grid
    seen = {CategoryLevel(d, v, s).index
            for d in range(5) for v in range(4) for s in range(4)}
    assert seen == set(range(NUM_CATEGORIES))


def test_category_level_validation():
    with pytest.raises(ValueError):
        CategoryLevel(5, 0, 0)
    with pytest.raises(ValueError):
        CategoryLevel(0, 4, 0)
    with pytest.raises(ValueError):
        CategoryLevel(0, 0, -1)


# -- distribution vectors -----------------------------------------------------


def test_distribution_vector_validation():
    with pytest.raises(ValueError):
        DistributionVector(np.zeros(79))
    with pytest.raises(ValueError):
        DistributionVector(np.full(NUM_CATEGORIES, 0.5))  # sums to 40
    bad = np.zeros(NUM_CATEGORIES)
    bad[0] = -0.5
    bad[1] = 1.5
    with pytest.raises(ValueError):
        DistributionVector(bad)
    assert DistributionVector.empty().is_empty


def test_distribution_splits_mass_per_view():
    rig = CameraRig.default()
    # two identical-category boxes straight ahead, one behind
    front_a = make_box(x=15.0, y=0.0)
    front_b = make_box(x=16.0, y=0.1)
    rear = make_box(x=-15.0, y=0.0)
    dists = distribution([front_a, front_b, rear], rig)
    assert len(dists) == rig.view_count
    front_view = view_of(front_a.center, rig)
    rear_view = view_of(rear.center, rig)
    assert dists[front_view].ratios.sum() == pytest.approx(1.0)
    assert dists[rear_view].ratios.sum() == pytest.approx(1.0)
    for j, d in enumerate(dists):
        if j not in (front_view, rear_view):
            assert d.is_empty
    # both front boxes share a category bin -> single bin holds all the mass
    assert categorize(front_a).index == categorize(front_b).index
    assert dists[front_view].ratios[categorize(front_a).index] == pytest.approx(1.0)


def test_distribution_mixed_categories_sum_to_one():
    rig = CameraRig.default()
    boxes = [make_box(x=5.0), make_box(x=15.0), make_box(x=35.0, vx=7.0)]
    # force them into one view
    view = view_of(boxes[0].center, rig)
    assert all(view_of(b.center, rig) == view for b in boxes)
    d = distribution(boxes, rig)[view]
    assert d.ratios.sum() == pytest.approx(1.0)
    assert np.count_nonzero(d.ratios) == 3
    assert np.all((d.ratios == 0) | np.isclose(d.ratios, 1 / 3))


# -- frame transforms ---------------------------------------------------------


def test_global_ego_round_trip():
    rng = np.random.default_rng(5)
    for _ in range(200):
        pose = EgoPose(x=float(rng.normal(0, 30)), y=float(rng.normal(0, 30)),
                       yaw=float(rng.uniform(-math.pi, math.pi)), t=0.0)
        b = make_box(x=float(rng.normal(0, 20)), y=float(rng.normal(0, 20)),
                     z=float(rng.uniform(0, 3)), vx=float(rng.normal(0, 5)),
                     vy=float(rng.normal(0, 5)), yaw=float(rng.uniform(-3, 3)))
        back = box_to_ego(box_to_global(b, pose), pose)
        assert np.allclose(back.center, b.center, atol=1e-9)
        assert np.allclose(back.velocity, b.velocity, atol=1e-9)
        assert back.size == b.size
        assert wrap_angle(back.yaw - b.yaw) == pytest.approx(0.0, abs=1e-9)


def test_ego_transform_velocity_rotates_but_does_not_translate():
    # ego moving does not change the object's velocity vector, only the frame
    pose = EgoPose(x=100.0, y=-50.0, yaw=math.pi / 2, t=0.0)
    b = make_box(x=10.0, y=0.0, vx=2.0, vy=0.0)
    g = box_to_global(b, pose)
    # +x in ego frame is +y in global frame after a 90 degree yaw
    assert g.center[0] == pytest.approx(100.0)
    assert g.center[1] == pytest.approx(-40.0)
    assert g.velocity[0] == pytest.approx(0.0, abs=1e-12)
    assert g.velocity[1] == pytest.approx(2.0)
    assert g.planar_speed == pytest.approx(b.planar_speed)


def test_ego_transform_between_two_poses_matches_composition():
    a = EgoPose(x=3.0, y=4.0, yaw=0.3, t=0.0)
    c = EgoPose(x=-7.0, y=2.0, yaw=-1.2, t=1.0)
    b = make_box(x=5.0, y=-1.0, vx=1.0, vy=0.5, yaw=0.7)
    direct = ego_transform(b, a, c)
    via_global = box_to_ego(box_to_global(b, a), c)
    assert np.allclose(direct.center, via_global.center, atol=1e-12)
    assert np.allclose(direct.velocity, via_global.velocity, atol=1e-12)
    assert wrap_angle(direct.yaw - via_global.yaw) == pytest.approx(0.0, abs=1e-12)
