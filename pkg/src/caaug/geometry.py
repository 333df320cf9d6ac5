"""Points, oriented boxes, z-rotations and spherical projection.

Coordinates follow the lidar frame: x forward, y left, z up. Column ``u``
grows clockwise seen from above: the forward direction maps to ``W/2`` and
rotating a point by ``-2*pi*k/W`` moves it exactly ``k`` columns right.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import ZeroRange

TWO_PI = 2.0 * math.pi

# provenance tags; inserted objects use their (non-negative) insertion id
GROUND = -1
OBSTACLE = -2

BEV_EPS = 1e-9


def normalize_angle(angle):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    angle = np.asarray(angle, dtype=np.float64)
    # in-range values pass through untouched so normalization is idempotent
    in_range = (angle > -np.pi) & (angle <= np.pi)
    wrapped = np.where(in_range, angle, np.pi - np.mod(np.pi - angle, TWO_PI))
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class LidarSpec:
    """Range-image geometry. Angles in radians."""

    width: int = 2048
    height: int = 64
    fov_up: float = math.radians(2.0)
    fov_down: float = math.radians(-24.8)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("range image must have positive size")
        if not self.fov_up > self.fov_down:
            raise ValueError("fov_up must exceed fov_down")

    @classmethod
    def from_degrees(cls, width=2048, height=64, fov_up=2.0, fov_down=-24.8):
        return cls(int(width), int(height), math.radians(fov_up), math.radians(fov_down))

    @property
    def fov(self) -> float:
        return self.fov_up - self.fov_down

    @property
    def column_angle(self) -> float:
        return TWO_PI / self.width

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height,
                "fov_up": self.fov_up, "fov_down": self.fov_down}

    @classmethod
    def from_dict(cls, d) -> "LidarSpec":
        return cls(int(d["width"]), int(d["height"]), float(d["fov_up"]), float(d["fov_down"]))


class Pixel(NamedTuple):
    u: int
    v: int


class Projection(NamedTuple):
    """Vectorized projection result; ``u``/``v`` are only meaningful where ``valid``."""

    u: np.ndarray
    v: np.ndarray
    r: np.ndarray
    valid: np.ndarray   # r > 0
    in_fov: np.ndarray  # valid and 0 <= v_real < H


@dataclass(frozen=True)
class PointCloud:
    """Ordered points with intensity and optional provenance tags.

    ``tags`` uses :data:`GROUND`, :data:`OBSTACLE` or a non-negative
    inserted-object id per point.
    """

    xyz: np.ndarray
    intensity: np.ndarray
    tags: Optional[np.ndarray] = None

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        intensity = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
        if len(intensity) != len(xyz):
            raise ValueError("intensity length does not match point count")
        if not (np.isfinite(xyz).all() and np.isfinite(intensity).all()):
            raise ValueError("point coordinates and intensities must be finite")
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "intensity", intensity)
        if self.tags is not None:
            tags = np.asarray(self.tags, dtype=np.int32).reshape(-1)
            if len(tags) != len(xyz):
                raise ValueError("tags must cover all points")
            object.__setattr__(self, "tags", tags)

    @classmethod
    def from_array(cls, arr, tags=None) -> "PointCloud":
        arr = np.asarray(arr)
        if arr.shape[1] >= 4:
            return cls(arr[:, :3], arr[:, 3], tags)
        return cls(arr[:, :3], np.zeros(len(arr)), tags)

    @classmethod
    def empty(cls, tagged=False) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0, np.int32) if tagged else None)

    def __len__(self):
        return len(self.xyz)

    @property
    def ranges(self) -> np.ndarray:
        return point_ranges(self.xyz)

    def to_array(self) -> np.ndarray:
        return np.column_stack([self.xyz, self.intensity])

    def subset(self, index) -> "PointCloud":
        tags = None if self.tags is None else self.tags[index]
        return PointCloud(self.xyz[index], self.intensity[index], tags)

    def with_tags(self, tags) -> "PointCloud":
        if tags is not None and np.ndim(tags) == 0:
            tags = np.full(len(self), int(tags), dtype=np.int32)
        return PointCloud(self.xyz, self.intensity, tags)

    @staticmethod
    def concatenate(clouds: Sequence["PointCloud"]) -> "PointCloud":
        clouds = list(clouds)
        if not clouds:
            return PointCloud.empty()
        tagged = all(c.tags is not None for c in clouds)
        return PointCloud(
            np.concatenate([c.xyz for c in clouds]),
            np.concatenate([c.intensity for c in clouds]),
            np.concatenate([c.tags for c in clouds]) if tagged else None,
        )


@dataclass(frozen=True)
class Box3D:
    """7-DoF box in the lidar frame; ``length`` runs along the heading."""

    cx: float
    cy: float
    cz: float
    length: float
    width: float
    height: float
    yaw: float
    label: str = "Car"
    difficulty: int = -1

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0 and self.height > 0):
            raise ValueError(f"box dimensions must be positive: {self}")
        for name in ("cx", "cy", "cz", "length", "width", "height"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz])

    @property
    def planar_range(self) -> float:
        """Distance of the center from the sensor in the ground plane."""
        return math.hypot(self.cx, self.cy)

    def replace(self, **changes) -> "Box3D":
        return replace(self, **changes)

    def to_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz, self.length, self.width, self.height, self.yaw])

    def to_dict(self) -> dict:
        return {"cx": self.cx, "cy": self.cy, "cz": self.cz, "length": self.length,
                "width": self.width, "height": self.height, "yaw": self.yaw,
                "label": self.label, "difficulty": self.difficulty}

    @classmethod
    def from_dict(cls, d) -> "Box3D":
        return cls(d["cx"], d["cy"], d["cz"], d["length"], d["width"], d["height"],
                   d["yaw"], d.get("label", "Car"), int(d.get("difficulty", -1)))


def point_ranges(xyz) -> np.ndarray:
    """Euclidean range per point, evaluated as sqrt(x*x + y*y + z*z) everywhere."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    return np.sqrt(x * x + y * y + z * z)


def project_points(xyz, spec: LidarSpec) -> Projection:
    """Project an (N, 3) array into range-image pixels.

    Columns wrap modulo W; rows are floored and flagged out of FOV when the
    unfloored row leaves [0, H). Points at the origin are marked invalid.
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    r = point_ranges(xyz)
    valid = r > 0
    safe_r = np.where(valid, r, 1.0)
    u_real = 0.5 * (1.0 - np.arctan2(y, x) / np.pi) * spec.width
    v_real = (1.0 - (np.arcsin(np.clip(z / safe_r, -1.0, 1.0)) - spec.fov_down) / spec.fov) * spec.height
    u = np.mod(np.floor(u_real).astype(np.int64), spec.width)
    v = np.floor(v_real).astype(np.int64)
    in_fov = valid & (v_real >= 0) & (v_real < spec.height)
    return Projection(u, v, r, valid, in_fov)


def project_columns(xyz, spec: LidarSpec) -> np.ndarray:
    """Azimuth columns only; cheaper than :func:`project_points`."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    u_real = 0.5 * (1.0 - np.arctan2(xyz[:, 1], xyz[:, 0]) / np.pi) * spec.width
    return np.mod(np.floor(u_real).astype(np.int64), spec.width)


def spherical_project(x: float, y: float, z: float, spec: LidarSpec) -> Optional[Pixel]:
    """Pixel of a single point, or ``None`` when it falls outside the vertical FOV."""
    r = math.sqrt(x * x + y * y + z * z)
    if r == 0:
        raise ZeroRange("cannot project a point at the sensor origin")
    proj = project_points(np.array([[x, y, z]]), spec)
    if not proj.in_fov[0]:
        return None
    return Pixel(int(proj.u[0]), int(proj.v[0]))


def rotate_points_z(xyz, dtheta: float) -> np.ndarray:
    c, s = math.cos(dtheta), math.sin(dtheta)
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    out = xyz.copy()
    out[:, 0] = c * xyz[:, 0] - s * xyz[:, 1]
    out[:, 1] = s * xyz[:, 0] + c * xyz[:, 1]
    return out


def rotate_box_z(box: Box3D, dtheta: float) -> Box3D:
    c, s = math.cos(dtheta), math.sin(dtheta)
    return box.replace(cx=c * box.cx - s * box.cy, cy=s * box.cx + c * box.cy,
                       yaw=normalize_angle(box.yaw + dtheta))


def rotate_z(cloud: PointCloud, box: Box3D, dtheta: float):
    """Rigidly rotate points and their box about the sensor's z-axis."""
    rotated = PointCloud(rotate_points_z(cloud.xyz, dtheta), cloud.intensity, cloud.tags)
    return rotated, rotate_box_z(box, dtheta)


def bev_corners(box: Box3D) -> np.ndarray:
    """(4, 2) corners: front-left, front-right, rear-right, rear-left."""
    hl, hw = box.length / 2.0, box.width / 2.0
    local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([box.cx, box.cy])


def _to_box_frame(q, box: Box3D) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).reshape(-1, 2)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx, dy = q[:, 0] - box.cx, q[:, 1] - box.cy
    return np.column_stack([c * dx + s * dy, -s * dx + c * dy])


def points_in_bev_box(q, box: Box3D, eps: float = BEV_EPS) -> np.ndarray:
    """Boolean mask of planar points inside (or on the boundary of) the box footprint."""
    local = _to_box_frame(q, box)
    return (np.abs(local[:, 0]) <= box.length / 2.0 + eps) & (np.abs(local[:, 1]) <= box.width / 2.0 + eps)


def point_in_bev_box(q, box: Box3D) -> bool:
    return bool(points_in_bev_box(q, box)[0])


def points_in_box_3d(cloud, box: Box3D, eps: float = BEV_EPS) -> np.ndarray:
    """Indices of points inside the box along all three box-aligned axes."""
    xyz = cloud.xyz if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    inside = points_in_bev_box(xyz[:, :2], box, eps)
    inside &= np.abs(xyz[:, 2] - box.cz) <= box.height / 2.0 + eps
    return np.flatnonzero(inside)


def points_in_boxes_mask(xyz, boxes: Sequence[Box3D], eps: float = BEV_EPS, cell: float = 1.0) -> np.ndarray:
    """Mask of points inside any of the boxes.

    A coarse occupancy grid of the boxes' bounding squares prefilters the
    points, so the exact test only runs on the few points near a box.
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    mask = np.zeros(len(xyz), bool)
    if not boxes or len(xyz) == 0:
        return mask
    centers = np.array([[b.cx, b.cy] for b in boxes])
    reach = np.array([0.5 * math.hypot(b.length, b.width) + eps for b in boxes])[:, None]
    lo = np.floor((centers - reach) / cell).astype(np.int64)
    hi = np.floor((centers + reach) / cell).astype(np.int64)
    origin = lo.min(axis=0)
    shape = hi.max(axis=0) - origin + 1
    grid = np.zeros(shape, bool)
    for (x0, y0), (x1, y1) in zip(lo - origin, hi - origin):
        grid[x0:x1 + 1, y0:y1 + 1] = True
    q = xyz[:, :2] / cell
    ij = np.floor(q, out=q).astype(np.int64) - origin
    inside_grid = (ij[:, 0] >= 0) & (ij[:, 1] >= 0) & (ij[:, 0] < shape[0]) & (ij[:, 1] < shape[1])
    near = np.flatnonzero(inside_grid)
    near = near[grid[ij[near, 0], ij[near, 1]]]
    for box in boxes:
        mask[near[points_in_box_3d(xyz[near], box, eps)]] = True
    return mask
