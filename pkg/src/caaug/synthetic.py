"""Ray-cast synthetic lidar frames with exact ground/obstacle provenance.

Beams are cast through pixel centers of the range image, so every returned
point projects back to the pixel that produced it and no point sits on a
column boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .geometry import GROUND, OBSTACLE, Box3D, LidarSpec, PointCloud
from .kitti import Calib, FrameBundle

GROUND_Z = -1.73

# typical KITTI dimensions (length, width, height)
CLASS_DIMS = {
    "Car": (3.9, 1.6, 1.56),
    "Pedestrian": (0.8, 0.6, 1.73),
    "Cyclist": (1.76, 0.6, 1.73),
}


@dataclass(frozen=True)
class RangeWall:
    """Surface at a fixed sensor range over an inclusive column band.

    Beams in the band return at exactly ``range`` unless the ground or a
    nearer surface is hit first or the hit is above ``z_top``.
    """

    col_start: int
    col_end: int
    range: float
    z_top: float = 3.0


@dataclass(frozen=True)
class Rod:
    """Vertical cylinder standing on the ground."""

    x: float
    y: float
    radius: float = 0.05
    height: float = 3.0

    @classmethod
    def at_column(cls, column: int, planar_range: float, spec: LidarSpec,
                  radius: Optional[float] = None, height: float = 3.0) -> "Rod":
        """Rod centered on a column's beam, thin enough to be hit in that column only."""
        azimuth = math.pi * (1.0 - 2.0 * (column + 0.5) / spec.width)
        if radius is None:
            radius = 0.4 * planar_range * spec.column_angle / 2.0
        return cls(planar_range * math.cos(azimuth), planar_range * math.sin(azimuth), radius, height)


@dataclass
class SceneDescriptor:
    spec: LidarSpec = field(default_factory=LidarSpec)
    ground_z: float = GROUND_Z
    ground_extent: float = 70.0
    ground_noise: float = 0.0
    walls: List[RangeWall] = field(default_factory=list)
    rods: List[Rod] = field(default_factory=list)
    objects: List[Box3D] = field(default_factory=list)


def beam_directions(spec: LidarSpec) -> np.ndarray:
    """(H, W, 3) unit vectors through every pixel center."""
    u = np.arange(spec.width) + 0.5
    v = np.arange(spec.height) + 0.5
    azimuth = np.pi * (1.0 - 2.0 * u / spec.width)
    elevation = spec.fov_down + (1.0 - v / spec.height) * spec.fov
    ce = np.cos(elevation)[:, None]
    return np.stack([ce * np.cos(azimuth)[None, :],
                     ce * np.sin(azimuth)[None, :],
                     np.broadcast_to(np.sin(elevation)[:, None], (spec.height, spec.width))], axis=-1)


def _hit_ground(d, desc):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(d[..., 2] < 0, desc.ground_z / d[..., 2], np.inf)
    planar = t * np.hypot(d[..., 0], d[..., 1])
    return np.where(planar <= desc.ground_extent, t, np.inf)


def _hit_wall(d, wall: RangeWall, spec, ground_z):
    cols = np.arange(spec.width)
    if wall.col_start <= wall.col_end:
        band = (cols >= wall.col_start) & (cols <= wall.col_end)
    else:
        band = (cols >= wall.col_start) | (cols <= wall.col_end)
    z = wall.range * d[..., 2]
    ok = band[None, :] & (z <= wall.z_top) & (z >= ground_z)
    return np.where(ok, wall.range, np.inf)


def _hit_rod(d, rod: Rod, ground_z):
    dx, dy = d[..., 0], d[..., 1]
    a = dx * dx + dy * dy
    b = -2.0 * (dx * rod.x + dy * rod.y)
    c = rod.x ** 2 + rod.y ** 2 - rod.radius ** 2
    disc = b * b - 4 * a * c
    with np.errstate(invalid="ignore", divide="ignore"):
        t = (-b - np.sqrt(disc)) / (2 * a)
    z = t * d[..., 2]
    ok = (disc >= 0) & (t > 0) & (z >= ground_z) & (z <= ground_z + rod.height)
    return np.where(ok, t, np.inf)


def _hit_box(d, box: Box3D):
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    # ray origin and direction in the box frame
    o = np.array([-(c * box.cx + s * box.cy), -(-s * box.cx + c * box.cy), -box.cz])
    dl = np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1], d[..., 2]], axis=-1)
    half = np.array([box.length, box.width, box.height]) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / dl
        t2 = (half - o) / dl
    t_near = np.nanmax(np.minimum(t1, t2), axis=-1)
    t_far = np.nanmin(np.maximum(t1, t2), axis=-1)
    ok = (t_near <= t_far) & (t_near > 0)
    return np.where(ok, t_near, np.inf)


def generate_synthetic_scene(desc: SceneDescriptor, rng: np.random.Generator,
                             frame_id: str = "000000") -> FrameBundle:
    """Cast one beam per pixel and keep the nearest hit.

    Ground hits are tagged GROUND, walls/rods/parked objects OBSTACLE. Parked
    objects become the frame's labelled boxes.
    """
    spec = desc.spec
    d = beam_directions(spec)
    surfaces = [_hit_ground(d, desc)]
    surfaces += [_hit_wall(d, w, spec, desc.ground_z) for w in desc.walls]
    surfaces += [_hit_rod(d, r, desc.ground_z) for r in desc.rods]
    surfaces += [_hit_box(d, b) for b in desc.objects]
    t_all = np.stack(surfaces)
    which = np.argmin(t_all, axis=0)
    t = np.take_along_axis(t_all, which[None], axis=0)[0]
    hit = np.isfinite(t)
    xyz = (d * np.where(hit, t, 0.0)[..., None])[hit]
    tags = np.where(which[hit] == 0, GROUND, OBSTACLE).astype(np.int32)
    if desc.ground_noise > 0:
        is_ground = tags == GROUND
        xyz[is_ground, 2] += rng.normal(0.0, desc.ground_noise, int(is_ground.sum()))
    intensity = rng.uniform(0.0, 1.0, len(xyz))
    cloud = PointCloud(xyz, intensity, tags)
    boxes = list(desc.objects)
    return FrameBundle(str(frame_id), cloud, boxes, [None] * len(boxes), Calib.kitti_like())


def make_box(label: str, x: float, y: float, yaw: float = 0.0, ground_z: float = GROUND_Z) -> Box3D:
    length, width, height = CLASS_DIMS[label]
    return Box3D(x, y, ground_z + height / 2.0, length, width, height, yaw, label, 0)


def _place_without_overlap(rng, labels: Sequence[str], r_range, az_range, ground_z, tries=200):
    from .placement import collision_check, CollisionMode

    boxes: List[Box3D] = []
    for label in labels:
        for _ in range(tries):
            r = rng.uniform(*r_range)
            az = rng.uniform(*az_range)
            box = make_box(label, r * math.cos(az), r * math.sin(az), rng.uniform(-math.pi, math.pi), ground_z)
            if not collision_check(box, boxes, CollisionMode.STRICT_POLYGON):
                boxes.append(box)
                break
    return boxes


def random_source_scene(rng: np.random.Generator, spec: Optional[LidarSpec] = None,
                        n_objects: int = 8, r_range=(8.0, 35.0), az_range=(-math.pi / 4, math.pi / 4),
                        classes=("Car", "Pedestrian", "Cyclist")) -> SceneDescriptor:
    """Open ground with parked objects, used to seed a GT database."""
    spec = spec or LidarSpec()
    labels = [classes[i] for i in rng.integers(len(classes), size=n_objects)]
    return SceneDescriptor(spec, objects=_place_without_overlap(rng, labels, r_range, az_range, GROUND_Z))


def random_wall_scene(rng: np.random.Generator, spec: Optional[LidarSpec] = None,
                      wall_range=(6.0, 9.0), half_angle=(math.pi / 5, math.pi / 3),
                      n_rods: int = 6, n_parked: int = 2) -> SceneDescriptor:
    """A wall across the forward view with open space to the sides and rear.

    Thin rods and a few parked cars sit in the open area.
    """
    spec = spec or LidarSpec()
    W = spec.width
    ha = rng.uniform(*half_angle)
    half_cols = int(ha / spec.column_angle)
    wall = RangeWall(W // 2 - half_cols, W // 2 + half_cols, float(rng.uniform(*wall_range)))
    rods = []
    for _ in range(n_rods):
        col = int(rng.integers(W))
        rods.append(Rod.at_column(col, float(rng.uniform(5.0, 30.0)), spec))
    parked = _place_without_overlap(rng, ["Car"] * n_parked, (10.0, 25.0),
                                    (math.pi / 2, 3 * math.pi / 2), GROUND_Z)
    return SceneDescriptor(spec, walls=[wall], rods=rods, objects=parked)
