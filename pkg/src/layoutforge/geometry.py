"""Scene types and the axis-aligned box geometry shared by fitness and metrics.

Sizes and positions are in centimeters. Poses use the box-center convention;
the optimization plane (see :class:`PlaneMap`) uses top-left pixel corners.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping


@dataclass(frozen=True)
class Vec3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError(f"non-finite Vec3 component: {self}")

    @classmethod
    def of(cls, seq) -> "Vec3":
        x, y, z = seq
        return cls(float(x), float(y), float(z))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def scale(self, k: float) -> "Vec3":
        return Vec3(self.x * k, self.y * k, self.z * k)


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    size: Vec3
    category: str = ""

    def __post_init__(self):
        if min(self.size.as_tuple()) <= 0:
            raise ValueError(f"object {self.name!r} has non-positive size {self.size}")


@dataclass(frozen=True)
class Boundary:
    """Supporting surface; its xy extent is [origin, origin + (width, depth)]."""

    width: float
    depth: float
    surface_z: float = 0.0
    origin_x: float = 0.0
    origin_y: float = 0.0

    def __post_init__(self):
        if self.width <= 0 or self.depth <= 0:
            raise ValueError(f"boundary extents must be positive, got {self.width}x{self.depth}")

    @property
    def min_xy(self) -> tuple[float, float]:
        return (self.origin_x, self.origin_y)

    @property
    def max_xy(self) -> tuple[float, float]:
        return (self.origin_x + self.width, self.origin_y + self.depth)

    def translated(self, dx: float, dy: float) -> "Boundary":
        return Boundary(self.width, self.depth, self.surface_z, self.origin_x + dx, self.origin_y + dy)


@dataclass(frozen=True)
class SceneSpec:
    instruction: str
    objects: tuple[ObjectSpec, ...]
    boundary: Boundary
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if not self.objects:
            raise ValueError("a scene needs at least one object")
        names = [o.name for o in self.objects]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate object names in scene: {names}")

    @property
    def names(self) -> list[str]:
        return [o.name for o in self.objects]

    def object(self, name: str) -> ObjectSpec:
        for o in self.objects:
            if o.name == name:
                return o
        raise KeyError(name)

    def sizes(self) -> dict[str, Vec3]:
        return {o.name: o.size for o in self.objects}


@dataclass(frozen=True)
class Pose:
    position: Vec3
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0


@dataclass(frozen=True)
class Aabb:
    min: Vec3
    max: Vec3

    def __post_init__(self):
        if any(lo > hi for lo, hi in zip(self.min.as_tuple(), self.max.as_tuple())):
            raise ValueError(f"inverted box: min={self.min} max={self.max}")

    @property
    def size(self) -> Vec3:
        return self.max - self.min

    @property
    def center(self) -> Vec3:
        return Vec3((self.min.x + self.max.x) / 2, (self.min.y + self.max.y) / 2, (self.min.z + self.max.z) / 2)

    def volume(self) -> float:
        s = self.size
        return s.x * s.y * s.z

    def translated(self, dx: float, dy: float, dz: float = 0.0) -> "Aabb":
        d = Vec3(dx, dy, dz)
        return Aabb(self.min + d, self.max + d)


def aabb_from_pose(pose: Pose, size: Vec3) -> Aabb:
    half = size.scale(0.5)
    return Aabb(pose.position - half, pose.position + half)


def intersection_volume(a: Aabb, b: Aabb) -> float:
    vol = 1.0
    for lo_a, hi_a, lo_b, hi_b in zip(a.min.as_tuple(), a.max.as_tuple(), b.min.as_tuple(), b.max.as_tuple()):
        vol *= max(0.0, min(hi_a, hi_b) - max(lo_a, lo_b))
    return vol


def iou(a: Aabb, b: Aabb) -> float:
    va, vb = a.volume(), b.volume()
    if va <= 0 and vb <= 0:
        raise ValueError("degenerate boxes")
    inter = intersection_volume(a, b)
    return inter / (va + vb - inter)


def _xy_overlap(a: Aabb, b: Aabb) -> bool:
    # closed intervals: touching edges count as intersecting
    return a.min.x <= b.max.x and b.min.x <= a.max.x and a.min.y <= b.max.y and b.min.y <= a.max.y


def is_stacking_pair(a: Aabb, b: Aabb) -> bool:
    if not _xy_overlap(a, b):
        return False
    return a.max.z <= b.min.z or b.max.z <= a.min.z


def footprint_contains(bottom: Aabb, top: Aabb) -> bool:
    return (
        bottom.min.x <= top.min.x
        and top.max.x <= bottom.max.x
        and bottom.min.y <= top.min.y
        and top.max.y <= bottom.max.y
    )


@dataclass(frozen=True)
class Layout:
    """Grounded result: center poses, their boxes and normalized plane corners."""

    poses: Mapping[str, Pose]
    boxes: Mapping[str, Aabb]
    plane_points: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if set(self.poses) != set(self.boxes) or (self.plane_points and set(self.plane_points) != set(self.poses)):
            raise ValueError("poses, boxes and plane_points must share one key set")

    @classmethod
    def from_boxes(cls, boxes: Mapping[str, Aabb], plane_points=None) -> "Layout":
        poses = {n: Pose(b.center) for n, b in boxes.items()}
        return cls(poses=poses, boxes=dict(boxes), plane_points=dict(plane_points or {}))

    @classmethod
    def from_poses(cls, poses: Mapping[str, Pose], sizes: Mapping[str, Vec3], plane_points=None) -> "Layout":
        boxes = {n: aabb_from_pose(p, sizes[n]) for n, p in poses.items()}
        return cls(poses=dict(poses), boxes=boxes, plane_points=dict(plane_points or {}))

    @property
    def names(self) -> list[str]:
        return list(self.boxes)

    def __len__(self) -> int:
        return len(self.boxes)


@dataclass(frozen=True)
class PlaneMap:
    """Affine map between table centimeters and the optimization pixel plane.

    Pixel y grows from the back edge of the table toward the user, so the
    top-left pixel corner of a footprint is its (min x, max y) corner in cm.
    """

    boundary: Boundary
    plane_w: int = 600
    plane_h: int = 300

    @property
    def sx(self) -> float:
        return self.plane_w / self.boundary.width

    @property
    def sy(self) -> float:
        return self.plane_h / self.boundary.depth

    def footprint_px(self, size: Vec3) -> tuple[float, float]:
        return (size.x * self.sx, size.y * self.sy)

    def corner_to_min_xy(self, px: float, py: float, size: Vec3) -> tuple[float, float]:
        b = self.boundary
        x_min = b.origin_x + px / self.sx
        y_max = b.origin_y + b.depth - py / self.sy
        return (x_min, y_max - size.y)

    def min_xy_to_corner(self, x_min: float, y_min: float, size: Vec3) -> tuple[float, float]:
        b = self.boundary
        px = (x_min - b.origin_x) * self.sx
        py = (b.origin_y + b.depth - (y_min + size.y)) * self.sy
        return (px, py)
