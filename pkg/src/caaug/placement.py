"""Context-aware placement: feasibility rates, Location Check and collision avoidance."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .database import GtObject
from .errors import SpecMismatch
from .geometry import BEV_EPS, Box3D, PointCloud, bev_corners, rotate_z

DEFAULT_THRESHOLD = 0.8


class CollisionMode(str, enum.Enum):
    PAPER_CORNERS = "corners"
    STRICT_POLYGON = "polygon"


class Rejection(str, enum.Enum):
    NO_FEASIBLE_COLUMN = "NoFeasibleColumn"
    ALL_COLLIDE = "AllCollide"


@dataclass(frozen=True)
class PlacementConfig:
    """Knobs of the Location Check.

    Attributes:
        threshold: a start column is feasible when its unoccluded fraction
            is strictly greater than this value.
        max_angle_retries: cap on collision retries per object; ``None``
            keeps drawing until the feasible set is exhausted.
        window: optional inclusive column interval ``(u_min, u_max)``; the
            whole object span must fall inside it.
        update_validspace: overwrite covered columns with the placed
            object's range after each acceptance (objects go near to far).
        near_to_far: sort candidates by center range before placing.
        collision_mode: corner test or exact rectangle overlap.
        circular: scan all W start columns with wrap-around; when false,
            only starts in ``[0, W - l_g]``.
        literal_inequality: use ``V < r_box + l_box/2`` for the column
            mask instead of the unoccluded direction ``V > ...``.
        rotate: when false the object is only tried at its original pose.
        check_feasibility: when false every column in scope is a candidate.
    """

    threshold: float = DEFAULT_THRESHOLD
    max_angle_retries: Optional[int] = None
    window: Optional[Tuple[int, int]] = None
    update_validspace: bool = False
    near_to_far: bool = False
    collision_mode: CollisionMode = CollisionMode.PAPER_CORNERS
    circular: bool = True
    literal_inequality: bool = False
    rotate: bool = True
    check_feasibility: bool = True

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if self.window is not None:
            lo, hi = self.window
            if not (0 <= lo <= hi):
                raise ValueError("window must satisfy 0 <= u_min <= u_max")
            object.__setattr__(self, "window", (int(lo), int(hi)))
        object.__setattr__(self, "collision_mode", CollisionMode(self.collision_mode))


def kitti_front_window(width: int, half_angle: float = math.pi / 4) -> Tuple[int, int]:
    """Column interval covering +-half_angle around the forward axis."""
    half = int(math.floor(half_angle / (2 * math.pi) * width))
    return width // 2 - half, width // 2 + half - 1


@dataclass
class Placement:
    obj: GtObject
    dtheta: float
    box: Box3D
    points: PointCloud
    start_col: int
    ratio: float


@dataclass
class PlacementResult:
    accepted: List[Placement] = field(default_factory=list)
    rejected: List[Tuple[GtObject, Rejection]] = field(default_factory=list)
    validspace: Optional[np.ndarray] = None


def occlusion_threshold(box: Box3D) -> float:
    """Far edge of the box: planar center range plus half its length."""
    return box.planar_range + box.length / 2.0


def feasibility_vector(validspace, rangebin, threshold_range: float, literal: bool = False) -> np.ndarray:
    """Unoccluded point fraction for every circular start column.

    ``r[j] = sum_t [V[(j+t) % W] > threshold_range] * rangebin[t] / n_g``.
    """
    V = np.asarray(validspace, dtype=np.float64)
    rb = np.asarray(rangebin, dtype=np.float64)
    W, l_g = len(V), len(rb)
    if l_g > W:
        raise ValueError("rangebin longer than the range image")
    mask = (V < threshold_range) if literal else (V > threshold_range)
    mask = mask.astype(np.float64)
    wrapped = np.concatenate([mask, mask[:l_g - 1]])
    # correlate(a, v, 'valid')[j] = sum_t a[j+t] * v[t]
    hits = np.correlate(wrapped, rb, mode="valid")
    return hits / rb.sum()


def _corners_inside(corners: np.ndarray, boxes: np.ndarray, eps: float = BEV_EPS) -> np.ndarray:
    """(K,) mask of boxes (rows cx, cy, l, w, yaw) containing any of the corners."""
    if len(boxes) == 0:
        return np.zeros(0, bool)
    c, s = np.cos(boxes[:, 4]), np.sin(boxes[:, 4])
    dx = corners[None, :, 0] - boxes[:, None, 0]
    dy = corners[None, :, 1] - boxes[:, None, 1]
    lx = c[:, None] * dx + s[:, None] * dy
    ly = -s[:, None] * dx + c[:, None] * dy
    inside = (np.abs(lx) <= boxes[:, None, 2] / 2 + eps) & (np.abs(ly) <= boxes[:, None, 3] / 2 + eps)
    return inside.any(axis=1)


def _bev_rows(boxes: Sequence[Box3D]) -> np.ndarray:
    return np.array([[b.cx, b.cy, b.length, b.width, b.yaw] for b in boxes], dtype=np.float64).reshape(-1, 5)


def rectangles_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex quadrilaterals given as (4, 2) corners.

    Touching counts as overlap.
    """
    for poly in (a, b):
        edges = np.roll(poly, -1, axis=0) - poly
        for nx, ny in np.column_stack([-edges[:, 1], edges[:, 0]]):
            pa = a @ (nx, ny)
            pb = b @ (nx, ny)
            if pa.max() < pb.min() - BEV_EPS or pb.max() < pa.min() - BEV_EPS:
                return False
    return True


def _bev_corner_stack(rows: np.ndarray) -> np.ndarray:
    """(K, 4, 2) corners for bev rows (cx, cy, l, w, yaw), same order as :func:`bev_corners`."""
    signs = np.array([[1, 1], [1, -1], [-1, -1], [-1, 1]], dtype=np.float64) / 2.0
    local = signs[None] * rows[:, None, 2:4]
    c, s = np.cos(rows[:, 4])[:, None], np.sin(rows[:, 4])[:, None]
    x = c * local[..., 0] - s * local[..., 1] + rows[:, None, 0]
    y = s * local[..., 0] + c * local[..., 1] + rows[:, None, 1]
    return np.stack([x, y], axis=-1)


class _CollisionSet:
    """Growing set of placed footprints with cached corner arrays."""

    def __init__(self, boxes: Sequence[Box3D], mode: CollisionMode):
        self.mode = CollisionMode(mode)
        self.rows = _bev_rows(boxes)
        self.corners = _bev_corner_stack(self.rows)

    def add(self, box: Box3D):
        row = _bev_rows([box])
        self.rows = np.vstack([self.rows, row])
        self.corners = np.concatenate([self.corners, _bev_corner_stack(row)])

    def collides(self, box: Box3D) -> bool:
        if len(self.rows) == 0:
            return False
        cand = bev_corners(box)
        if self.mode is CollisionMode.STRICT_POLYGON:
            return any(rectangles_overlap(cand, other) for other in self.corners)
        if _corners_inside(cand, self.rows).any():
            return True
        return bool(_corners_inside(self.corners.reshape(-1, 2), _bev_rows([box])).any())


def collision_check(candidate: Box3D, placed: Sequence[Box3D],
                    mode: CollisionMode = CollisionMode.PAPER_CORNERS) -> bool:
    """True when the candidate's footprint collides with any placed box.

    The corner mode flags a collision when a corner of either box lies inside
    the other; it is cheap but misses cross-shaped overlaps with no corner
    inside. The polygon mode is exact.
    """
    return _CollisionSet(placed, mode).collides(candidate)


def rotate_to_column(obj: GtObject, target_start_col: int, width: int):
    """Rotate an object about z so its span starts at ``target_start_col``.

    Returns:
        (dtheta, new_box, new_points)
    """
    dtheta = (obj.start_col - int(target_start_col)) * (2.0 * math.pi / width)
    points, box = rotate_z(obj.points, obj.box, dtheta)
    return dtheta, box, points


def update_validspace(validspace, r_box: float, start_col: int, l_g: int) -> np.ndarray:
    """Overwrite ``l_g`` columns from ``start_col`` (circularly) with ``r_box``."""
    out = np.array(validspace, dtype=np.float64, copy=True)
    if l_g > 0:
        out[(start_col + np.arange(l_g)) % len(out)] = r_box
    return out


def candidate_columns(ratios: np.ndarray, l_g: int, config: PlacementConfig) -> np.ndarray:
    """Start columns in scope (window, linear vs circular) whose ratio exceeds the threshold."""
    W = len(ratios)
    starts = np.arange(W)
    scope = np.ones(W, bool)
    if not config.circular:
        scope &= starts <= W - l_g
    if config.window is not None:
        lo, hi = config.window
        scope &= (starts >= lo) & (starts + l_g - 1 <= hi)
    if config.check_feasibility:
        scope &= ratios > config.threshold
    return np.flatnonzero(scope)


def location_check(validspace, candidates: Sequence[GtObject], existing_boxes: Sequence[Box3D],
                   config: PlacementConfig, rng: np.random.Generator) -> PlacementResult:
    """Place candidates one by one at random feasible, collision-free columns.

    Existing scene boxes are always part of the collision set. With
    ``config.update_validspace`` the returned ``validspace`` reflects every
    accepted object.
    """
    V = np.array(validspace, dtype=np.float64, copy=True)
    W = len(V)
    order = list(candidates)
    if config.update_validspace or config.near_to_far:
        order.sort(key=lambda o: o.box.planar_range)
    result = PlacementResult()
    placed = _CollisionSet(existing_boxes, config.collision_mode)
    for obj in order:
        if obj.l_g > W or obj.start_col >= W:
            raise SpecMismatch(f"object rangebin does not fit a {W}-column validspace")
        ratios = feasibility_vector(V, obj.rangebin, occlusion_threshold(obj.box), config.literal_inequality)
        if config.rotate:
            columns = candidate_columns(ratios, obj.l_g, config)
        else:
            columns = np.array([obj.start_col])
            if config.check_feasibility and not ratios[obj.start_col] > config.threshold:
                columns = columns[:0]
        if len(columns) == 0:
            result.rejected.append((obj, Rejection.NO_FEASIBLE_COLUMN))
            continue
        pool = list(columns)
        tries = 0
        accepted = None
        while pool:
            col = pool.pop(int(rng.integers(len(pool))))
            dtheta, box, points = rotate_to_column(obj, col, W)
            if not placed.collides(box):
                accepted = Placement(obj, dtheta, box, points, int(col), float(ratios[col]))
                break
            tries += 1
            if config.max_angle_retries is not None and tries >= config.max_angle_retries:
                break
        if accepted is None:
            result.rejected.append((obj, Rejection.ALL_COLLIDE))
            continue
        result.accepted.append(accepted)
        placed.add(accepted.box)
        if config.update_validspace:
            V = update_validspace(V, accepted.box.planar_range, accepted.start_col, obj.l_g)
    result.validspace = V
    return result
