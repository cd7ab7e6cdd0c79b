"""Learned accuracy and latency predictors.

The accuracy model maps (per-view category distribution, branch identity,
mean tracked confidence) to an expected per-view detection score in [0, 1].
It is a gradient-boosted ensemble of shallow regression trees, written out
here directly: training must be exactly reproducible and the model has to
serialize to plain JSON, which rules out an external boosting dependency.

The latency side is much simpler: the per-frame tracker-update cost is affine
in the number of live tracks, fit by least squares; branch execution costs
come straight from the device profile.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .branches import (
    NUM_BRANCHES,
    DeviceProfile,
    branch_latency,
    enumerate_branches,
    fixed_latency,
    group_cost,
)
from .core import NUM_CATEGORIES, DistributionVector

FEATURE_WIDTH = NUM_CATEGORIES + NUM_BRANCHES + 1  # 80 + 17 + 1
_CONF_SLOT = NUM_CATEGORIES + NUM_BRANCHES

MODEL_FORMAT_VERSION = 1


def accuracy_features(
    dist: DistributionVector, branch_index: int, mean_track_confidence: float = 0.0
) -> np.ndarray:
    """Feature vector for one (view, branch) cell.

    Layout: 80 distribution ratios, 17-wide branch one-hot, then one slot for
    the mean confidence of tracked objects in the view. The confidence slot
    is only meaningful for the tracker branch; detection branches carry 0
    there so the width never varies.
    """
    if not 0 <= branch_index < NUM_BRANCHES:
        raise ValueError(f"branch index out of range: {branch_index}")
    out = np.zeros(FEATURE_WIDTH, dtype=np.float64)
    out[:NUM_CATEGORIES] = dist.ratios
    out[NUM_CATEGORIES + branch_index] = 1.0
    if branch_index == 0:
        out[_CONF_SLOT] = mean_track_confidence
    return out


# -- regression trees -------------------------------------------------------


class RegressionTree:
    """One axis-aligned regression tree stored as flat node arrays.

    Internal nodes route x[feature] <= threshold to `left`; leaves have
    feature == -1 and carry their value in `value`.
    """

    def __init__(
        self,
        feature: np.ndarray,
        threshold: np.ndarray,
        left: np.ndarray,
        right: np.ndarray,
        value: np.ndarray,
    ):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.value = value

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        node = np.zeros(n, dtype=np.int64)
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                break
            rows = np.nonzero(active)[0]
            nd = node[rows]
            go_left = x[rows, feat[rows]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
        return self.value[node]

    def to_dict(self) -> dict:
        def build(i: int) -> dict:
            if self.feature[i] < 0:
                return {"leaf_value": float(self.value[i])}
            return {
                "feature_index": int(self.feature[i]),
                "threshold": float(self.threshold[i]),
                "left": build(int(self.left[i])),
                "right": build(int(self.right[i])),
            }

        return build(0)

    @classmethod
    def from_dict(cls, data: Mapping) -> "RegressionTree":
        feature: List[int] = []
        threshold: List[float] = []
        left: List[int] = []
        right: List[int] = []
        value: List[float] = []

        def walk(node: Mapping) -> int:
            i = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            if "leaf_value" in node:
                value[i] = float(node["leaf_value"])
            else:
                feature[i] = int(node["feature_index"])
                threshold[i] = float(node["threshold"])
                left[i] = walk(node["left"])
                right[i] = walk(node["right"])
            return i

        walk(data)
        return cls(
            np.asarray(feature, dtype=np.int64),
            np.asarray(threshold, dtype=np.float64),
            np.asarray(left, dtype=np.int64),
            np.asarray(right, dtype=np.int64),
            np.asarray(value, dtype=np.float64),
        )


def _best_split(
    x: np.ndarray, y: np.ndarray, min_leaf: int
) -> Optional[Tuple[int, float, np.ndarray]]:
    """Exact greedy split of one node: (feature, threshold, left mask).

    Maximizes squared-error reduction; deterministic tie-breaking (lowest
    feature index, then earliest split point). Returns None when nothing
    beats the parent.
    """
    n, d = x.shape
    total = float(y.sum())
    parent = total * total / n
    best_gain = 1e-12
    best: Optional[Tuple[int, float, np.ndarray]] = None

    for f in range(d):
        col = x[:, f]
        if col.min() == col.max():  # constant feature, nothing to split
            continue
        order = np.argsort(col, kind="stable")
        xs = col[order]
        cs = np.cumsum(y[order])

        k = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (k >= min_leaf) & (n - k >= min_leaf)
        if not valid.any():
            continue
        left_sum = cs[:-1]
        score = left_sum**2 / k + (total - left_sum) ** 2 / (n - k)
        score[~valid] = -np.inf
        pos = int(np.argmax(score))
        gain = float(score[pos]) - parent
        if gain > best_gain:
            split_k = pos + 1
            thr = (xs[split_k - 1] + xs[split_k]) / 2.0
            if thr >= xs[split_k]:  # adjacent floats can collapse the midpoint
                thr = xs[split_k]
                thr = float(np.nextafter(thr, -np.inf))
            mask = col <= thr
            best_gain = gain
            best = (f, float(thr), mask)
    return best


def _grow_tree(x: np.ndarray, y: np.ndarray, max_depth: int, min_leaf: int) -> RegressionTree:
    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    value: List[float] = []

    def grow(idx: np.ndarray, depth: int) -> int:
        i = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        if depth >= max_depth or len(idx) < 2 * min_leaf:
            return i
        split = _best_split(x[idx], y[idx], min_leaf)
        if split is None:
            return i
        f, thr, mask = split
        feature[i] = f
        threshold[i] = thr
        left[i] = grow(idx[mask], depth + 1)
        right[i] = grow(idx[~mask], depth + 1)
        return i

    grow(np.arange(len(y)), 0)
    return RegressionTree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=np.float64),
    )


@dataclass(frozen=True)
class GBRTParams:
    rounds: int = 80
    max_depth: int = 3
    learning_rate: float = 0.1
    min_samples_leaf: int = 5

    def __post_init__(self) -> None:
        if self.rounds < 1 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValueError("rounds, max_depth, min_samples_leaf must be >= 1")
        if not 0.0 < self.learning_rate <= 2.0:
            raise ValueError("learning_rate must be in (0, 2]")


class GBRTModel:
    """Boosted tree ensemble; prediction is clamped to [0, 1]."""

    def __init__(
        self,
        base_score: float,
        learning_rate: float,
        trees: Sequence[RegressionTree],
        n_features: int,
        training_mse: Sequence[float] = (),
    ):
        self.base_score = float(base_score)
        self.learning_rate = float(learning_rate)
        self.trees = list(trees)
        self.n_features = int(n_features)
        self.training_mse = tuple(float(v) for v in training_mse)

    def raw_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(f"expected (n, {self.n_features}) features, got {x.shape}")
        out = np.full(x.shape[0], self.base_score, dtype=np.float64)
        for tree in self.trees:
            out += self.learning_rate * tree.predict_batch(x)
        return out

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        return np.clip(self.raw_batch(x), 0.0, 1.0)

    def predict(self, features: np.ndarray) -> float:
        return float(self.predict_batch(np.asarray(features, dtype=np.float64)[None, :])[0])

    def to_dict(self) -> dict:
        return {
            "version": MODEL_FORMAT_VERSION,
            "kind": "gbrt",
            "n_features": self.n_features,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "GBRTModel":
        if data.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model version: {data.get('version')!r}")
        if data.get("kind") != "gbrt":
            raise ValueError(f"unsupported model kind: {data.get('kind')!r}")
        return cls(
            base_score=float(data["base_score"]),
            learning_rate=float(data["learning_rate"]),
            trees=[RegressionTree.from_dict(t) for t in data["trees"]],
            n_features=int(data["n_features"]),
        )


def train_gbrt(
    features: np.ndarray, targets: np.ndarray, params: Optional[GBRTParams] = None
) -> GBRTModel:
    """Fit the boosted ensemble on squared error.

    Deterministic: exact greedy splits, no subsampling, no randomness; the
    same inputs always produce the identical model file. Targets must lie in
    [0, 1] (they are detection scores).
    """
    params = params or GBRTParams()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("features must be (n, d) with matching targets")
    if len(y) == 0:
        raise ValueError("no training samples")
    if np.any(y < 0.0) or np.any(y > 1.0):
        raise ValueError("targets must lie in [0, 1]")

    base = float(y.mean())
    pred = np.full(len(y), base)
    trees: List[RegressionTree] = []
    mse_trace: List[float] = []
    for _ in range(params.rounds):
        resid = y - pred
        tree = _grow_tree(x, resid, params.max_depth, params.min_samples_leaf)
        trees.append(tree)
        pred += params.learning_rate * tree.predict_batch(x)
        mse_trace.append(float(np.mean((y - pred) ** 2)))
    return GBRTModel(base, params.learning_rate, trees, x.shape[1], mse_trace)


def predict_accuracy(model: GBRTModel, features: np.ndarray) -> float:
    """Expected per-view detection score in [0, 1] for one feature vector."""
    return model.predict(features)


# -- latency ----------------------------------------------------------------


@dataclass(frozen=True)
class LinearLatencyModel:
    """Tracker-update cost, affine in the live track count."""

    slope_ms_per_track: float
    intercept_ms: float

    def __post_init__(self) -> None:
        if self.slope_ms_per_track < 0 or self.intercept_ms < 0:
            raise ValueError("latency model coefficients must be non-negative")

    def predict(self, track_count: int) -> float:
        if track_count < 0:
            raise ValueError("track count must be non-negative")
        return self.slope_ms_per_track * track_count + self.intercept_ms

    def to_dict(self) -> dict:
        return {
            "slope_ms_per_track": self.slope_ms_per_track,
            "intercept_ms": self.intercept_ms,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "LinearLatencyModel":
        return cls(
            slope_ms_per_track=float(data["slope_ms_per_track"]),
            intercept_ms=float(data["intercept_ms"]),
        )


def fit_update_latency(
    track_counts: Sequence[int], latencies_ms: Sequence[float]
) -> LinearLatencyModel:
    """Least-squares fit of the affine update-cost model.

    Needs at least two distinct track counts; negative fitted coefficients
    are clamped to zero (they would predict negative cost).
    """
    counts = np.asarray(track_counts, dtype=np.float64)
    lats = np.asarray(latencies_ms, dtype=np.float64)
    if counts.shape != lats.shape or counts.ndim != 1:
        raise ValueError("track_counts and latencies_ms must be 1-d and equal length")
    if len(np.unique(counts)) < 2:
        raise ValueError("need at least two distinct track counts to fit a slope")
    design = np.column_stack([np.ones_like(counts), counts])
    coef, *_ = np.linalg.lstsq(design, lats, rcond=None)
    return LinearLatencyModel(
        slope_ms_per_track=max(float(coef[1]), 0.0),
        intercept_ms=max(float(coef[0]), 0.0),
    )


def predict_frame_latency(
    assignment: Sequence[int],
    device: DeviceProfile,
    update_model: LinearLatencyModel,
    track_count: int,
    alpha: float = 1.0,
) -> float:
    """Predicted full-frame latency for a view->branch assignment.

    Views running the same branch share a batch (cost via `group_cost`);
    the fixed per-frame modules and the predicted tracker-update cost are
    added on top.
    """
    catalog = enumerate_branches()
    counts: Dict[int, int] = {}
    for idx in assignment:
        counts[idx] = counts.get(idx, 0) + 1
    total = fixed_latency(device)
    for idx, k in sorted(counts.items()):
        total += group_cost(branch_latency(catalog[idx], device), k, alpha)
    return total + update_model.predict(track_count)


# -- combined bundle ----------------------------------------------------------


@dataclass
class PerformanceModels:
    """Everything the scheduler needs to predict: accuracy and update cost."""

    accuracy: GBRTModel
    update_latency: LinearLatencyModel

    def to_dict(self, training_info: Optional[Mapping] = None) -> dict:
        out = {
            "version": MODEL_FORMAT_VERSION,
            "accuracy": self.accuracy.to_dict(),
            "update_latency": self.update_latency.to_dict(),
        }
        if training_info is not None:
            out["training"] = dict(training_info)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "PerformanceModels":
        if data.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported models version: {data.get('version')!r}")
        return cls(
            accuracy=GBRTModel.from_dict(data["accuracy"]),
            update_latency=LinearLatencyModel.from_dict(data["update_latency"]),
        )

    def save(self, path: str, training_info: Optional[Mapping] = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(training_info), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "PerformanceModels":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
