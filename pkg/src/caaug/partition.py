"""Ground/obstacle split by pillar height span, and the Validspace vector."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyCloud
from .geometry import GROUND, OBSTACLE, LidarSpec, PointCloud, point_ranges, project_columns

DEFAULT_PILLAR_SIZE = 0.25
DEFAULT_SIGMA = 0.4


@dataclass(frozen=True)
class PillarGrid:
    """Points bucketed into d x d vertical cells keyed by (floor(x/d), floor(y/d)).

    Attributes:
        size: pillar side length in meters.
        cells: (M, 2) integer cell coordinates, sorted lexicographically.
        z_min, z_max: (M,) height extent of the points in each cell.
        point_cell: (N,) row of ``cells`` each point belongs to.
    """

    size: float
    cells: np.ndarray
    z_min: np.ndarray
    z_max: np.ndarray
    point_cell: np.ndarray

    @property
    def span(self) -> np.ndarray:
        return self.z_max - self.z_min

    def members(self, cell_row: int) -> np.ndarray:
        return np.flatnonzero(self.point_cell == cell_row)


def _pillar_keys(xyz, size: float):
    """Dense integer key per point and the key space size."""
    q = xyz[:, :2] / size
    ij = np.floor(q, out=q).astype(np.int64)
    lo = ij.min(axis=0)
    extent = ij.max(axis=0) - lo + 1
    key = (ij[:, 0] - lo[0]) * extent[1] + (ij[:, 1] - lo[1])
    return key, lo, extent


def _span_by_key(key, z, n_keys):
    zmin = np.full(n_keys, np.inf)
    zmax = np.full(n_keys, -np.inf)
    np.minimum.at(zmin, key, z)
    np.maximum.at(zmax, key, z)
    return zmin, zmax


def _dense_ok(n_keys: int, n_points: int) -> bool:
    return n_keys <= 8 * n_points + 4096


def build_pillar_grid(xyz, size: float) -> PillarGrid:
    if size <= 0:
        raise ValueError("pillar size must be positive")
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    if len(xyz) == 0:
        empty = np.zeros(0)
        return PillarGrid(size, np.zeros((0, 2), np.int64), empty, empty, np.zeros(0, np.int64))
    key, lo, extent = _pillar_keys(xyz, size)
    n_dense = int(extent[0] * extent[1])
    if _dense_ok(n_dense, len(key)):
        zmin, zmax = _span_by_key(key, xyz[:, 2], n_dense)
        occupied = np.flatnonzero(np.isfinite(zmin))
        row_of_key = np.empty(n_dense, np.int64)
        row_of_key[occupied] = np.arange(len(occupied))
        point_cell = row_of_key[key]
        keys = occupied
        zmin, zmax = zmin[occupied], zmax[occupied]
    else:
        keys, point_cell = np.unique(key, return_inverse=True)
        zmin, zmax = _span_by_key(point_cell, xyz[:, 2], len(keys))
    cells = np.column_stack([keys // extent[1] + lo[0], keys % extent[1] + lo[1]])
    return PillarGrid(size, cells, zmin, zmax, point_cell)


@dataclass(frozen=True)
class Partition:
    obstacle: np.ndarray
    ground: np.ndarray

    @classmethod
    def from_mask(cls, obstacle_mask) -> "Partition":
        obstacle_mask = np.asarray(obstacle_mask, dtype=bool)
        return cls(np.flatnonzero(obstacle_mask), np.flatnonzero(~obstacle_mask))

    @classmethod
    def from_tags(cls, tags) -> "Partition":
        """Partition taken from ground-truth provenance (synthetic scenes)."""
        return cls.from_mask(np.asarray(tags) != GROUND)

    def tags(self, n: int) -> np.ndarray:
        out = np.full(n, GROUND, dtype=np.int32)
        out[self.obstacle] = OBSTACLE
        return out


def partition_scene(cloud: PointCloud, d: float = DEFAULT_PILLAR_SIZE,
                    sigma: float = DEFAULT_SIGMA) -> Partition:
    """Mark every point of a pillar whose z-span exceeds ``sigma`` as obstacle."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if len(cloud) == 0:
        raise EmptyCloud("frame has no points")
    if d <= 0:
        raise ValueError("pillar size must be positive")
    key, _, extent = _pillar_keys(cloud.xyz, d)
    n_dense = int(extent[0] * extent[1])
    if not _dense_ok(n_dense, len(key)):
        grid = build_pillar_grid(cloud.xyz, d)
        return Partition.from_mask((grid.span > sigma)[grid.point_cell])
    zmin, zmax = _span_by_key(key, cloud.xyz[:, 2], n_dense)
    return Partition.from_mask((zmax - zmin)[key] > sigma)


def compute_validspace(cloud: PointCloud, partition: Partition, spec: LidarSpec) -> np.ndarray:
    """Per-column minimum range of obstacle points; ``inf`` where a column has none.

    Every obstacle point contributes to its azimuth column whatever its row,
    so gaps between scan lines and points outside the vertical FOV count.
    """
    validspace = np.full(spec.width, np.inf)
    xyz = cloud.xyz[partition.obstacle]
    r = point_ranges(xyz)
    keep = r > 0
    if keep.any():
        np.minimum.at(validspace, project_columns(xyz[keep], spec), r[keep])
    return validspace
