"""Shared geometry and category types.

Everything downstream (tracker, simulator, metrics, scheduler features) speaks
in terms of the types defined here: 3D boxes with velocity, ego poses, the
camera rig's angular sectors, and the 80-bin object category grid
(5 distance x 4 velocity x 4 size levels).
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Sequence, Tuple

import numpy as np

TWO_PI = 2.0 * math.pi

# Category bin edges. Intervals are half-open [lo, hi); the last bin is open-ended.
DISTANCE_EDGES_M = (10.0, 20.0, 30.0, 40.0)
VELOCITY_EDGES_MPS = (0.2, 1.0, 5.0)
SIZE_EDGES_M3 = (1.0, 5.0, 15.0)

NUM_DISTANCE_LEVELS = len(DISTANCE_EDGES_M) + 1
NUM_VELOCITY_LEVELS = len(VELOCITY_EDGES_MPS) + 1
NUM_SIZE_LEVELS = len(SIZE_EDGES_M3) + 1
NUM_CATEGORIES = NUM_DISTANCE_LEVELS * NUM_VELOCITY_LEVELS * NUM_SIZE_LEVELS


class ObjectClass(Enum):
    CAR = "car"
    TRUCK = "truck"
    BUS = "bus"
    PEDESTRIAN = "pedestrian"
    MOTORCYCLE = "motorcycle"
    BICYCLE = "bicycle"


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(angle, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    elif a > math.pi:
        a -= TWO_PI
    return a


@dataclass(frozen=True)
class Box3D:
    """A 3D bounding box with velocity, in some ego (or global) frame.

    center : (x, y, z) m
    size   : (w, h, l) m, each > 0
    velocity : (vx, vy, vz) m/s, expressed in the same frame's axes
    yaw    : heading, radians in (-pi, pi]
    """

    center: Tuple[float, float, float]
    size: Tuple[float, float, float]
    velocity: Tuple[float, float, float]
    yaw: float
    cls: ObjectClass
    confidence: float

    def __post_init__(self) -> None:
        if min(self.size) <= 0.0:
            raise ValueError(f"box size must be positive, got {self.size}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def planar_distance(self) -> float:
        return math.hypot(self.center[0], self.center[1])

    @property
    def planar_speed(self) -> float:
        return math.hypot(self.velocity[0], self.velocity[1])

    @property
    def volume(self) -> float:
        w, h, l = self.size
        return w * h * l


@dataclass(frozen=True)
class EgoPose:
    """Planar ego pose in the global frame at time t."""

    x: float
    y: float
    yaw: float
    t: float


GLOBAL_FRAME = EgoPose(0.0, 0.0, 0.0, 0.0)


class CameraRig:
    """Angular sectors, one per camera view, partitioning [-pi, pi).

    Sectors are half-open [lo, hi) intervals; a sector with lo > hi wraps
    through +/-pi (the rear view of the default rig does).
    """

    def __init__(self, sectors: Sequence[Tuple[float, float]]):
        if not sectors:
            raise ValueError("rig needs at least one sector")
        self._sectors = tuple((float(lo), float(hi)) for lo, hi in sectors)
        self._validate_partition()

    @classmethod
    def default(cls, view_count: int = 6) -> "CameraRig":
        """Evenly split rig; view 0 is centered on the +x axis."""
        if view_count < 1:
            raise ValueError("view_count must be >= 1")
        width = TWO_PI / view_count
        sectors = []
        for k in range(view_count):
            lo = -width / 2.0 + k * width
            hi = lo + width
            # keep bounds inside [-pi, pi) so wrap handling stays localized
            lo_w = math.remainder(lo, TWO_PI)
            hi_w = math.remainder(hi, TWO_PI)
            if lo_w >= math.pi:
                lo_w -= TWO_PI
            if hi_w >= math.pi:
                hi_w -= TWO_PI
            sectors.append((lo_w, hi_w))
        return cls(sectors)

    @property
    def view_count(self) -> int:
        return len(self._sectors)

    @property
    def sectors(self) -> Tuple[Tuple[float, float], ...]:
        return self._sectors

    def _width(self, sector: Tuple[float, float]) -> float:
        lo, hi = sector
        w = hi - lo
        if w <= 0.0:
            w += TWO_PI
        return w

    def _validate_partition(self) -> None:
        total = sum(self._width(s) for s in self._sectors)
        if abs(total - TWO_PI) > 1e-9:
            raise ValueError(f"sectors must cover 2*pi, got total width {total}")
        # each angle must land in exactly one sector
        starts = sorted(self._sectors, key=lambda s: s[0])
        for (lo_a, hi_a), (lo_b, _) in zip(starts, starts[1:]):
            end = hi_a if hi_a > lo_a else hi_a + TWO_PI
            if abs(end - lo_b) > 1e-9:
                raise ValueError("sectors overlap or leave gaps")

    def view_of_angle(self, angle: float) -> int:
        a = wrap_angle(angle)
        if a == math.pi:  # sectors live on [-pi, pi)
            a = -math.pi
        for idx, (lo, hi) in enumerate(self._sectors):
            if lo < hi:
                if lo <= a < hi:
                    return idx
            else:  # wrapped sector
                if a >= lo or a < hi:
                    return idx
        # Partition validation tolerates 1e-9 of construction rounding between
        # adjacent edges, so an angle can fall into a float-width gap no sector
        # covers exactly. Claim the sector whose start is nearest at-or-below
        # the angle (wrapping below the smallest start), which agrees with the
        # exact rule everywhere else.
        order = sorted(range(len(self._sectors)), key=lambda i: self._sectors[i][0])
        best = order[-1]
        for i in order:
            if self._sectors[i][0] <= a:
                best = i
            else:
                break
        return best


def view_of(center: Tuple[float, float, float], rig: CameraRig) -> int:
    """View index whose sector contains the box center's bearing."""
    return rig.view_of_angle(math.atan2(center[1], center[0]))


@dataclass(frozen=True)
class CategoryLevel:
    """Discrete (distance, velocity, size) level triple."""

    distance_level: int
    velocity_level: int
    size_level: int

    def __post_init__(self) -> None:
        if not 0 <= self.distance_level < NUM_DISTANCE_LEVELS:
            raise ValueError(f"distance_level out of range: {self.distance_level}")
        if not 0 <= self.velocity_level < NUM_VELOCITY_LEVELS:
            raise ValueError(f"velocity_level out of range: {self.velocity_level}")
        if not 0 <= self.size_level < NUM_SIZE_LEVELS:
            raise ValueError(f"size_level out of range: {self.size_level}")

    @property
    def index(self) -> int:
        """Flat index into the 80-bin grid; distance varies fastest."""
        return (
            self.distance_level
            + NUM_DISTANCE_LEVELS * self.velocity_level
            + NUM_DISTANCE_LEVELS * NUM_VELOCITY_LEVELS * self.size_level
        )


def categorize(box: Box3D) -> CategoryLevel:
    """Assign a box to its category levels.

    Distance and speed are planar (x, y); size uses full box volume.
    Bin intervals are half-open, so a value exactly on an edge belongs to
    the higher bin (e.g. distance 10.0 -> level 1).
    """
    return CategoryLevel(
        distance_level=bisect_right(DISTANCE_EDGES_M, box.planar_distance),
        velocity_level=bisect_right(VELOCITY_EDGES_MPS, box.planar_speed),
        size_level=bisect_right(SIZE_EDGES_M3, box.volume),
    )


class DistributionVector:
    """Per-view category histogram: 80 ratios summing to 1 (or all zero)."""

    __slots__ = ("_ratios",)

    def __init__(self, ratios: Sequence[float]):
        arr = np.asarray(ratios, dtype=np.float64)
        if arr.shape != (NUM_CATEGORIES,):
            raise ValueError(f"expected {NUM_CATEGORIES} ratios, got shape {arr.shape}")
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise ValueError("ratios must lie in [0, 1]")
        total = float(arr.sum())
        if not (abs(total - 1.0) <= 1e-9 or total == 0.0):
            raise ValueError(f"ratios must sum to 1 or be all zero, got {total}")
        arr.setflags(write=False)
        self._ratios = arr

    @property
    def ratios(self) -> np.ndarray:
        return self._ratios

    @property
    def is_empty(self) -> bool:
        return float(self._ratios.sum()) == 0.0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DistributionVector):
            return NotImplemented
        return bool(np.array_equal(self._ratios, other._ratios))

    def __repr__(self) -> str:
        nz = int(np.count_nonzero(self._ratios))
        return f"DistributionVector(nonzero_bins={nz})"

    @classmethod
    def empty(cls) -> "DistributionVector":
        return cls(np.zeros(NUM_CATEGORIES))


def distribution(boxes: Iterable[Box3D], rig: CameraRig) -> List[DistributionVector]:
    """Per-view category distributions for a set of boxes (one ego frame).

    A view with no boxes gets the all-zero vector. Each object contributes
    1/count to its category bin within its view, so every non-empty vector
    sums to 1 exactly up to float rounding.
    """
    counts = np.zeros((rig.view_count, NUM_CATEGORIES), dtype=np.float64)
    for box in boxes:
        view = view_of(box.center, rig)
        counts[view, categorize(box).index] += 1.0
    out: List[DistributionVector] = []
    for row in counts:
        total = row.sum()
        out.append(DistributionVector(row / total if total > 0 else row))
    return out


def ego_transform(box: Box3D, from_pose: EgoPose, to_pose: EgoPose) -> Box3D:
    """Re-express a box given in `from_pose`'s frame in `to_pose`'s frame.

    Planar rigid transform: center translates and rotates, velocity and yaw
    rotate (velocity is a free vector; no ego-motion subtraction), z and size
    pass through.
    """
    cf, sf = math.cos(from_pose.yaw), math.sin(from_pose.yaw)
    gx = from_pose.x + cf * box.center[0] - sf * box.center[1]
    gy = from_pose.y + sf * box.center[0] + cf * box.center[1]
    gvx = cf * box.velocity[0] - sf * box.velocity[1]
    gvy = sf * box.velocity[0] + cf * box.velocity[1]

    ct, st = math.cos(to_pose.yaw), math.sin(to_pose.yaw)
    dx, dy = gx - to_pose.x, gy - to_pose.y
    nx = ct * dx + st * dy
    ny = -st * dx + ct * dy
    nvx = ct * gvx + st * gvy
    nvy = -st * gvx + ct * gvy

    return Box3D(
        center=(nx, ny, box.center[2]),
        size=box.size,
        velocity=(nvx, nvy, box.velocity[2]),
        yaw=wrap_angle(box.yaw + from_pose.yaw - to_pose.yaw),
        cls=box.cls,
        confidence=box.confidence,
    )


def box_to_global(box: Box3D, pose: EgoPose) -> Box3D:
    """Lift an ego-frame box into the global frame."""
    return ego_transform(box, pose, GLOBAL_FRAME)


def box_to_ego(box: Box3D, pose: EgoPose) -> Box3D:
    """Project a global-frame box into an ego frame."""
    return ego_transform(box, GLOBAL_FRAME, pose)
