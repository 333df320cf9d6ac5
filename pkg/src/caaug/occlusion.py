"""Range-image z-buffering and the Naive / Culling / Drilling strategies.

Points that fall outside the vertical field of view (or sit at the origin)
are invisible to the range view and are kept untouched by every strategy.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import UnknownStrategy
from .geometry import OBSTACLE, LidarSpec, PointCloud, project_points

DEFAULT_MIN_POINTS = 4
DEFAULT_MIN_FRACTION = 0.25


class Strategy(str, enum.Enum):
    NONE = "none"
    NAIVE = "naive"
    CULLING = "culling"
    DRILLING = "drilling"

    @classmethod
    def parse(cls, value) -> "Strategy":
        try:
            return cls(str(getattr(value, "value", value)).lower())
        except ValueError:
            raise UnknownStrategy(f"unknown occlusion strategy {value!r}") from None


@dataclass
class RangeImage:
    """Nearest-point z-buffer.

    Attributes:
        index: (H, W) winning point index, -1 for empty cells.
        range: (H, W) winning range, ``inf`` for empty cells.
        shadow: indices of in-FOV points that lost their pixel.
        shadow_pixels: (len(shadow), 2) ``(v, u)`` of each shadowed point.
        outside: indices of points not in the image (out of FOV or r == 0).
    """

    spec: LidarSpec
    index: np.ndarray
    range: np.ndarray
    shadow: np.ndarray
    shadow_pixels: np.ndarray
    outside: np.ndarray

    @property
    def occupied(self) -> int:
        return int((self.index >= 0).sum())


def _pixel_ids(xyz, spec):
    proj = project_points(xyz, spec)
    pix = np.where(proj.in_fov, proj.v * spec.width + proj.u, -1)
    return pix, proj.r


def _zbuffer(pix: np.ndarray, key: np.ndarray, n_pixels: int) -> np.ndarray:
    """Winner index per pixel: smallest key, ties to the lowest point index."""
    winner = np.full(n_pixels, -1, dtype=np.int64)
    live = np.flatnonzero(pix >= 0)
    if len(live) == 0:
        return winner
    best = np.full(n_pixels, np.inf)
    np.minimum.at(best, pix[live], key[live])
    tied = live[key[live] == best[pix[live]]]
    lowest = np.full(n_pixels, np.iinfo(np.int64).max)
    np.minimum.at(lowest, pix[tied], tied)
    hit = lowest != np.iinfo(np.int64).max
    winner[hit] = lowest[hit]
    return winner


def render_range_image(cloud: PointCloud, spec: LidarSpec) -> RangeImage:
    pix, r = _pixel_ids(cloud.xyz, spec)
    winner = _zbuffer(pix, r, spec.width * spec.height)
    is_winner = np.zeros(len(cloud), bool)
    is_winner[winner[winner >= 0]] = True
    shadow = np.flatnonzero((pix >= 0) & ~is_winner)
    rng_img = np.full(spec.width * spec.height, np.inf)
    rng_img[winner >= 0] = r[winner[winner >= 0]]
    sp = pix[shadow]
    return RangeImage(
        spec,
        winner.reshape(spec.height, spec.width),
        rng_img.reshape(spec.height, spec.width),
        shadow,
        np.column_stack([sp // spec.width, sp % spec.width]),
        np.flatnonzero(pix < 0),
    )


@dataclass
class ObjectVisibility:
    obj_id: int
    n_points: int
    retained: int

    @property
    def fraction(self) -> float:
        return self.retained / self.n_points if self.n_points else 0.0


@dataclass
class OcclusionReport:
    strategy: Strategy
    objects: List[ObjectVisibility] = field(default_factory=list)
    dropped: List[int] = field(default_factory=list)
    deleted_background: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    def by_id(self) -> Dict[int, ObjectVisibility]:
        return {o.obj_id: o for o in self.objects}

    def to_text(self) -> str:
        lines = [f"strategy {self.strategy.value}"]
        for o in self.objects:
            lines.append(f"object {o.obj_id} {o.n_points} {o.retained} {o.fraction:.6f}")
        lines.append("dropped " + " ".join(str(i) for i in self.dropped))
        lines.append(f"deleted_background {len(self.deleted_background)} "
                     + " ".join(str(int(i)) for i in self.deleted_background))
        return "\n".join(line.rstrip() for line in lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "OcclusionReport":
        report = cls(Strategy.NONE)
        for line in text.splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "strategy":
                report.strategy = Strategy.parse(parts[1])
            elif parts[0] == "object":
                report.objects.append(ObjectVisibility(int(parts[1]), int(parts[2]), int(parts[3])))
            elif parts[0] == "dropped":
                report.dropped = [int(p) for p in parts[1:]]
            elif parts[0] == "deleted_background":
                report.deleted_background = np.array([int(p) for p in parts[2:]], dtype=np.int64)
        return report


def _require_tags(cloud: PointCloud):
    if cloud.tags is None:
        raise ValueError("occlusion strategies need provenance tags")


def _visibility(tags: np.ndarray, keep: np.ndarray) -> List[ObjectVisibility]:
    ids = np.unique(tags[tags >= 0])
    total = np.bincount(tags[tags >= 0], minlength=int(ids.max()) + 1 if len(ids) else 0)
    kept = np.bincount(tags[keep & (tags >= 0)], minlength=len(total))
    return [ObjectVisibility(int(i), int(total[i]), int(kept[i])) for i in ids]


def _naive_keep(cloud: PointCloud, spec: LidarSpec, pix=None, r=None) -> np.ndarray:
    if pix is None:
        pix, r = _pixel_ids(cloud.xyz, spec)
    winner = _zbuffer(pix, r, spec.width * spec.height)
    keep = pix < 0
    keep[winner[winner >= 0]] = True
    return keep


def _contest_keep(tags: np.ndarray, spec: LidarSpec, pix, r) -> np.ndarray:
    """Z-buffer where background only loses to inserted points.

    Background-vs-background conflicts are left as captured.
    """
    n_pixels = spec.width * spec.height
    winner = _zbuffer(pix, r, n_pixels)
    keep = pix < 0
    won = winner[winner >= 0]
    keep[won] = True
    obj_pixel = np.zeros(n_pixels, bool)
    obj_pixel[np.flatnonzero(winner >= 0)[tags[won] >= 0]] = True
    keep |= (tags < 0) & (pix >= 0) & ~obj_pixel[np.maximum(pix, 0)]
    return keep


def apply_naive(cloud: PointCloud, spec: LidarSpec) -> PointCloud:
    """Keep only z-buffer winners (plus points outside the image)."""
    return cloud.subset(_naive_keep(cloud, spec))


def naive_with_report(cloud: PointCloud, spec: LidarSpec) -> Tuple[PointCloud, OcclusionReport]:
    _require_tags(cloud)
    keep = _naive_keep(cloud, spec)
    report = OcclusionReport(Strategy.NAIVE, _visibility(cloud.tags, keep))
    report.deleted_background = np.flatnonzero(~keep & (cloud.tags < 0))
    return cloud.subset(keep), report


def apply_culling(cloud: PointCloud, spec: LidarSpec, min_points: int = DEFAULT_MIN_POINTS,
                  min_fraction: float = DEFAULT_MIN_FRACTION) -> Tuple[PointCloud, OcclusionReport]:
    """Z-buffer, then drop inserted objects left with too few points.

    Background points are only removed where an inserted point wins the
    pixel. An object is dropped when fewer than ``min_points`` survive or the
    surviving fraction is below ``min_fraction`` (exactly ``min_fraction``
    is kept). Dropped objects are removed before a final z-buffer pass, so
    background they shadowed is restored.
    """
    _require_tags(cloud)
    tags = cloud.tags
    pix, r = _pixel_ids(cloud.xyz, spec)
    first = _contest_keep(tags, spec, pix, r)
    visibility = _visibility(tags, first)
    dropped = [o.obj_id for o in visibility
               if o.retained < min_points or o.retained < min_fraction * o.n_points]
    present = ~np.isin(tags, dropped) if dropped else np.ones(len(cloud), bool)
    survivors = np.flatnonzero(present)
    keep = np.zeros(len(cloud), bool)
    keep[survivors[_contest_keep(tags[survivors], spec, pix[survivors], r[survivors])]] = True
    report = OcclusionReport(Strategy.CULLING, _visibility(tags, keep), dropped)
    report.deleted_background = np.flatnonzero(~keep & (tags < 0))
    return cloud.subset(keep), report


def apply_drilling(cloud: PointCloud, spec: LidarSpec) -> Tuple[PointCloud, OcclusionReport]:
    """Delete background points sharing a pixel with any inserted point.

    Inserted points compete among themselves through the z-buffer;
    background-only pixels are left as they are.
    """
    _require_tags(cloud)
    tags = cloud.tags
    pix, r = _pixel_ids(cloud.xyz, spec)
    is_obj = tags >= 0
    n_pixels = spec.width * spec.height
    obj_pixel = np.zeros(n_pixels, bool)
    obj_pixel[pix[is_obj & (pix >= 0)]] = True
    drilled = ~is_obj & (pix >= 0) & obj_pixel[np.maximum(pix, 0)]
    obj_pix = np.where(is_obj, pix, -1)
    winner = _zbuffer(obj_pix, r, n_pixels)
    keep = ~drilled & ~(is_obj & (pix >= 0))
    keep[winner[winner >= 0]] = True
    report = OcclusionReport(Strategy.DRILLING, _visibility(tags, keep))
    report.deleted_background = np.flatnonzero(drilled)
    return cloud.subset(keep), report


def merge(scene: PointCloud, inserted: Optional[PointCloud]) -> PointCloud:
    """Concatenate a scene and inserted objects; untagged scene points become obstacles."""
    if scene.tags is None:
        scene = scene.with_tags(OBSTACLE)
    if inserted is None or len(inserted) == 0:
        return scene
    if inserted.tags is None:
        raise ValueError("inserted points need object-id tags")
    return PointCloud.concatenate([scene, inserted])


def resolve(scene: PointCloud, inserted: Optional[PointCloud], strategy, spec: LidarSpec,
            min_points: int = DEFAULT_MIN_POINTS,
            min_fraction: float = DEFAULT_MIN_FRACTION) -> Tuple[PointCloud, OcclusionReport]:
    """Merge and apply one occlusion strategy; ``none`` returns the raw merge."""
    strategy = Strategy.parse(strategy)
    merged = merge(scene, inserted)
    if strategy is Strategy.NONE:
        keep = np.ones(len(merged), bool)
        return merged, OcclusionReport(Strategy.NONE, _visibility(merged.tags, keep))
    if strategy is Strategy.NAIVE:
        return naive_with_report(merged, spec)
    if strategy is Strategy.CULLING:
        return apply_culling(merged, spec, min_points, min_fraction)
    return apply_drilling(merged, spec)
