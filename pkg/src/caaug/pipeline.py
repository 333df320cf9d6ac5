"""End-to-end frame augmentation and the dataset driver.

Random streams: ``derive_frame_seed(master_seed, frame_id)`` gives each frame
its own seed, independent of worker count and processing order. A frame
seed spawns three child streams, in order: object sampling, placement,
global augmentation.
"""
from __future__ import annotations

import json
import logging
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .database import DEFAULT_SAMPLE_COUNTS, GtDatabase, load_database, sample_objects
from .errors import ConfigError, SpecMismatch
from .geometry import LidarSpec, PointCloud, normalize_angle, points_in_boxes_mask, rotate_box_z, rotate_points_z
from .kitti import FrameBundle, list_frames, read_frame, write_frame
from .occlusion import DEFAULT_MIN_FRACTION, DEFAULT_MIN_POINTS, OcclusionReport, Strategy, resolve
from .partition import DEFAULT_PILLAR_SIZE, DEFAULT_SIGMA, compute_validspace, partition_scene
from .placement import CollisionMode, PlacementConfig, PlacementResult, kitti_front_window, location_check

log = logging.getLogger(__name__)

LATENCY_BUDGET_S = 0.050


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _parse_pair(text: str) -> Tuple[float, float]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 2:
        raise ConfigError(f"expected two numbers: {text!r}")
    return float(parts[0]), float(parts[1])


@dataclass
class AugConfig:
    """Everything that controls one augmentation run.

    Serialized as ``key = value`` lines (see :meth:`to_text`); ``#`` starts a
    comment. ``window`` is ``full``, ``kitti_front`` or ``u_min,u_max``.
    """

    spec: LidarSpec = field(default_factory=LidarSpec)
    pillar_size: float = DEFAULT_PILLAR_SIZE
    sigma: float = DEFAULT_SIGMA
    placement: PlacementConfig = field(default_factory=PlacementConfig)
    window: str = "full"
    sample_counts: Dict[str, int] = field(default_factory=lambda: dict(DEFAULT_SAMPLE_COUNTS))
    strategy: Strategy = Strategy.CULLING
    culling_min_points: int = DEFAULT_MIN_POINTS
    culling_min_fraction: float = DEFAULT_MIN_FRACTION
    remove_points_in_boxes: bool = True
    global_augment: bool = True
    rotation_range: Tuple[float, float] = (-math.pi / 4, math.pi / 4)
    flip_prob: float = 0.5
    scale_range: Tuple[float, float] = (0.95, 1.05)
    seed: int = 0

    def __post_init__(self):
        self.strategy = Strategy.parse(self.strategy)
        if self.pillar_size <= 0 or self.sigma <= 0:
            raise ConfigError("pillar_size and sigma must be positive")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError("flip_prob must lie in [0, 1]")
        if self.rotation_range[0] > self.rotation_range[1] or self.scale_range[0] > self.scale_range[1]:
            raise ConfigError("ranges must be (low, high)")
        if self.scale_range[0] <= 0:
            raise ConfigError("scale must stay positive")
        if any(v < 0 for v in self.sample_counts.values()):
            raise ConfigError("sample counts must be non-negative")
        if self.window.strip().lower() == "full" and self.placement.window is not None:
            self.window = "{},{}".format(*self.placement.window)
        resolved = self._resolve_window()
        if resolved != self.placement.window:
            self.placement = replace(self.placement, window=resolved)

    def _resolve_window(self):
        w = self.window.strip().lower()
        if w == "full":
            return None
        if w == "kitti_front":
            return kitti_front_window(self.spec.width)
        lo, hi = _parse_pair(w)
        if not 0 <= lo <= hi < self.spec.width:
            raise ConfigError(f"window {self.window!r} outside [0, {self.spec.width})")
        return int(lo), int(hi)

    def to_text(self) -> str:
        p = self.placement
        lines = [
            f"width = {self.spec.width}",
            f"height = {self.spec.height}",
            f"fov_up_deg = {math.degrees(self.spec.fov_up)!r}",
            f"fov_down_deg = {math.degrees(self.spec.fov_down)!r}",
            f"pillar_size = {self.pillar_size!r}",
            f"sigma = {self.sigma!r}",
            f"threshold = {p.threshold!r}",
            f"max_angle_retries = {'none' if p.max_angle_retries is None else p.max_angle_retries}",
            f"window = {self.window}",
            f"update_validspace = {str(p.update_validspace).lower()}",
            f"near_to_far = {str(p.near_to_far).lower()}",
            f"collision_mode = {p.collision_mode.value}",
            f"circular = {str(p.circular).lower()}",
            f"literal_inequality = {str(p.literal_inequality).lower()}",
            f"rotate = {str(p.rotate).lower()}",
            f"check_feasibility = {str(p.check_feasibility).lower()}",
        ]
        lines += [f"sample.{k} = {v}" for k, v in self.sample_counts.items()]
        lines += [
            f"strategy = {self.strategy.value}",
            f"culling_min_points = {self.culling_min_points}",
            f"culling_min_fraction = {self.culling_min_fraction!r}",
            f"remove_points_in_boxes = {str(self.remove_points_in_boxes).lower()}",
            f"global_augment = {str(self.global_augment).lower()}",
            f"rotation_range = {self.rotation_range[0]!r}, {self.rotation_range[1]!r}",
            f"flip_prob = {self.flip_prob!r}",
            f"scale_range = {self.scale_range[0]!r}, {self.scale_range[1]!r}",
            f"seed = {self.seed}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "AugConfig":
        raw: Dict[str, str] = {}
        counts: Dict[str, int] = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key.startswith("sample."):
                counts[key[len("sample."):]] = int(value)
            else:
                raw[key] = value
        return cls.from_mapping(raw, counts or None)

    @classmethod
    def from_mapping(cls, raw: Dict[str, str], counts=None) -> "AugConfig":
        raw = dict(raw)
        try:
            spec = LidarSpec.from_degrees(int(raw.pop("width", 2048)), int(raw.pop("height", 64)),
                                          float(raw.pop("fov_up_deg", 2.0)), float(raw.pop("fov_down_deg", -24.8)))
            retries = raw.pop("max_angle_retries", "none")
            placement = PlacementConfig(
                threshold=float(raw.pop("threshold", 0.8)),
                max_angle_retries=None if retries.lower() == "none" else int(retries),
                update_validspace=_parse_bool(raw.pop("update_validspace", "false")),
                near_to_far=_parse_bool(raw.pop("near_to_far", "false")),
                collision_mode=CollisionMode(raw.pop("collision_mode", "corners")),
                circular=_parse_bool(raw.pop("circular", "true")),
                literal_inequality=_parse_bool(raw.pop("literal_inequality", "false")),
                rotate=_parse_bool(raw.pop("rotate", "true")),
                check_feasibility=_parse_bool(raw.pop("check_feasibility", "true")),
            )
            cfg = cls(
                spec=spec,
                pillar_size=float(raw.pop("pillar_size", DEFAULT_PILLAR_SIZE)),
                sigma=float(raw.pop("sigma", DEFAULT_SIGMA)),
                placement=placement,
                window=raw.pop("window", "full"),
                sample_counts=dict(counts) if counts is not None else dict(DEFAULT_SAMPLE_COUNTS),
                strategy=raw.pop("strategy", "culling"),
                culling_min_points=int(raw.pop("culling_min_points", DEFAULT_MIN_POINTS)),
                culling_min_fraction=float(raw.pop("culling_min_fraction", DEFAULT_MIN_FRACTION)),
                remove_points_in_boxes=_parse_bool(raw.pop("remove_points_in_boxes", "true")),
                global_augment=_parse_bool(raw.pop("global_augment", "true")),
                rotation_range=_parse_pair(raw.pop("rotation_range", f"{-math.pi / 4}, {math.pi / 4}")),
                flip_prob=float(raw.pop("flip_prob", 0.5)),
                scale_range=_parse_pair(raw.pop("scale_range", "0.95, 1.05")),
                seed=int(raw.pop("seed", 0)),
            )
        except (ValueError, TypeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        if raw:
            raise ConfigError(f"unknown config keys: {sorted(raw)}")
        return cfg

    @classmethod
    def load(cls, path) -> "AugConfig":
        return cls.from_text(Path(path).read_text())


def frame_key(frame_id) -> int:
    text = str(frame_id)
    return int(text) if text.isdigit() else zlib.crc32(text.encode())


def derive_frame_seed(master_seed: int, frame_id) -> int:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(frame_key(frame_id),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def frame_streams(frame_seed: int):
    """(sampling, placement, global) generators for one frame."""
    children = np.random.SeedSequence(int(frame_seed)).spawn(3)
    return tuple(np.random.Generator(np.random.PCG64(c)) for c in children)


@dataclass(frozen=True)
class GlobalTransform:
    """Rotation about z, then optional mirror over the x-axis (y -> -y), then scaling."""

    rotation: float = 0.0
    flip: bool = False
    scale: float = 1.0

    @classmethod
    def draw(cls, rng: np.random.Generator, config: AugConfig) -> "GlobalTransform":
        # always three draws, so the stream layout does not depend on settings
        angle = rng.uniform(*config.rotation_range)
        flip = rng.random() < config.flip_prob
        scale = rng.uniform(*config.scale_range)
        return cls(float(angle), bool(flip), float(scale))

    def apply_points(self, xyz) -> np.ndarray:
        out = rotate_points_z(xyz, self.rotation)
        if self.flip:
            out[:, 1] = -out[:, 1]
        return out * self.scale

    def invert_points(self, xyz) -> np.ndarray:
        out = np.asarray(xyz, dtype=np.float64).reshape(-1, 3) / self.scale
        if self.flip:
            out[:, 1] = -out[:, 1]
        return rotate_points_z(out, -self.rotation)

    def apply_box(self, box):
        box = rotate_box_z(box, self.rotation)
        if self.flip:
            box = box.replace(cy=-box.cy, yaw=normalize_angle(-box.yaw))
        s = self.scale
        return box.replace(cx=box.cx * s, cy=box.cy * s, cz=box.cz * s,
                           length=box.length * s, width=box.width * s, height=box.height * s)

    def invert_box(self, box):
        s = self.scale
        box = box.replace(cx=box.cx / s, cy=box.cy / s, cz=box.cz / s,
                          length=box.length / s, width=box.width / s, height=box.height / s)
        if self.flip:
            box = box.replace(cy=-box.cy, yaw=normalize_angle(-box.yaw))
        return rotate_box_z(box, -self.rotation)

    def to_dict(self):
        return {"rotation": self.rotation, "flip": self.flip, "scale": self.scale}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["rotation"]), bool(d["flip"]), float(d["scale"]))


@dataclass
class FrameStats:
    frame_id: str = ""
    candidates: int = 0
    accepted: int = 0
    culled: int = 0
    rejections: Dict[str, int] = field(default_factory=dict)
    ratios: List[float] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)
    occlusion: Optional[OcclusionReport] = None

    @property
    def rejected(self) -> int:
        return sum(self.rejections.values())

    def to_text(self, timings: bool = True) -> str:
        lines = [f"frame {self.frame_id}", f"candidates {self.candidates}",
                 f"accepted {self.accepted}", f"culled {self.culled}"]
        lines += [f"rejected {k} {v}" for k, v in sorted(self.rejections.items())]
        lines.append("ratios " + " ".join(f"{r:.6f}" for r in self.ratios))
        if timings:
            lines += self.timing_lines()
        text = "\n".join(line.rstrip() for line in lines) + "\n"
        if self.occlusion is not None:
            text += "--- occlusion\n" + self.occlusion.to_text()
        return text

    def timing_lines(self) -> List[str]:
        return [f"timing {k} {v:.6f}" for k, v in self.timings.items()]

    @classmethod
    def from_text(cls, text: str) -> "FrameStats":
        head, _, occ = text.partition("--- occlusion\n")
        st = cls()
        for line in head.splitlines():
            parts = line.split()
            if not parts:
                continue
            key = parts[0]
            if key == "frame":
                st.frame_id = parts[1] if len(parts) > 1 else ""
            elif key in ("candidates", "accepted", "culled"):
                setattr(st, key, int(parts[1]))
            elif key == "rejected":
                st.rejections[parts[1]] = int(parts[2])
            elif key == "ratios":
                st.ratios = [float(p) for p in parts[1:]]
            elif key == "timing":
                st.timings[parts[1]] = float(parts[2])
        if occ:
            st.occlusion = OcclusionReport.from_text(occ)
        return st


@dataclass
class FrameOutput:
    """Everything one augmented frame produces.

    ``tags`` and ``insertion_xyz`` align with ``bundle.cloud``;
    ``insertion_xyz`` holds the points before global augmentation.
    """

    bundle: FrameBundle
    stats: FrameStats
    tags: np.ndarray
    insertion_xyz: np.ndarray
    validspace: np.ndarray
    placement: PlacementResult
    transform: GlobalTransform
    manifest: dict


def run_frame(bundle: FrameBundle, db: GtDatabase, config: AugConfig, frame_seed: int) -> FrameOutput:
    """Partition, place, merge, resolve occlusion and apply global augmentation."""
    if db.spec != config.spec:
        raise SpecMismatch("database spec differs from the configured spec")
    spec = config.spec
    timings: Dict[str, float] = {}
    clock = time.perf_counter
    t0 = clock()

    scene = bundle.cloud
    partition = partition_scene(scene, config.pillar_size, config.sigma)
    scene = scene.with_tags(partition.tags(len(scene)))
    t1 = clock()
    timings["partition"] = t1 - t0
    validspace = compute_validspace(scene, partition, spec)
    t2 = clock()
    timings["validspace"] = t2 - t1

    rng_sample, rng_place, rng_global = frame_streams(frame_seed)
    candidates = sample_objects(db, config.sample_counts, rng_sample)
    result = location_check(validspace, candidates, bundle.boxes, config.placement, rng_place)
    t3 = clock()
    timings["placement"] = t3 - t2

    inserted = PointCloud.concatenate(
        [p.points.with_tags(i) for i, p in enumerate(result.accepted)]) if result.accepted else None
    if inserted is not None and config.remove_points_in_boxes:
        inside = points_in_boxes_mask(scene.xyz, [p.box for p in result.accepted])
        scene = scene.subset(~inside)
    merged, report = resolve(scene, inserted, config.strategy, spec,
                             config.culling_min_points, config.culling_min_fraction)
    t4 = clock()
    timings["occlusion"] = t4 - t3

    culled = set(report.dropped)
    boxes = list(bundle.boxes)
    labels = list(bundle.labels)
    label_index: Dict[int, int] = {}
    for i, p in enumerate(result.accepted):
        if i in culled:
            continue
        label_index[i] = len(boxes)
        boxes.append(p.box)
        labels.append(None)

    insertion_xyz = merged.xyz
    if config.global_augment:
        transform = GlobalTransform.draw(rng_global, config)
        xyz = transform.apply_points(merged.xyz)
        boxes = [transform.apply_box(b) for b in boxes]
    else:
        transform = GlobalTransform()
        xyz = merged.xyz
    out_bundle = FrameBundle(bundle.frame_id, PointCloud(xyz, merged.intensity), boxes, labels,
                             bundle.calib, list(bundle.dontcare))
    t5 = clock()
    timings["global"] = t5 - t4
    timings["total"] = t5 - t0

    rejections: Dict[str, int] = {}
    for _, reason in result.rejected:
        rejections[reason.value] = rejections.get(reason.value, 0) + 1
    stats = FrameStats(bundle.frame_id, len(candidates), len(result.accepted), len(culled), rejections,
                       [p.ratio for p in result.accepted], timings, report)
    manifest = {
        "frame_id": bundle.frame_id,
        "frame_seed": int(frame_seed),
        "master_seed": int(config.seed),
        "strategy": config.strategy.value,
        "global_transform": transform.to_dict(),
        "n_scene_labels": len(bundle.boxes),
        "label_sentinels": "inserted labels carry truncated=-1 occluded=-1 alpha=-10 bbox=-1",
        "inserted": [
            {
                "insert_id": i,
                "db_obj_id": p.obj.obj_id,
                "label": p.obj.label,
                "source_frame": p.obj.source_frame,
                "dtheta": p.dtheta,
                "start_col": p.start_col,
                "original_start_col": p.obj.start_col,
                "original_box": p.obj.box.to_dict(),
                "ratio": p.ratio,
                "box": p.box.to_dict(),
                "rangebin": [int(v) for v in p.obj.rangebin],
                "n_g": p.obj.n_g,
                "culled": i in culled,
                "label_index": label_index.get(i),
            }
            for i, p in enumerate(result.accepted)
        ],
        "rejected": [{"db_obj_id": o.obj_id, "label": o.label, "reason": r.value} for o, r in result.rejected],
    }
    return FrameOutput(out_bundle, stats, merged.tags, insertion_xyz, validspace, result, transform, manifest)


def augment_frame(bundle: FrameBundle, db: GtDatabase, config: AugConfig,
                  frame_seed: int) -> Tuple[FrameBundle, FrameStats]:
    out = run_frame(bundle, db, config, frame_seed)
    return out.bundle, out.stats


def write_output(out: FrameOutput, out_dir) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    paths = write_frame(out.bundle, out_dir, out.manifest)
    fid = out.bundle.frame_id
    (out_dir / "aux").mkdir(parents=True, exist_ok=True)
    paths["aux"] = out_dir / "aux" / f"{fid}.npz"
    with open(paths["aux"], "wb") as f:
        np.savez(f, tags=out.tags, insertion_xyz=out.insertion_xyz, validspace=out.validspace)
    (out_dir / "stats").mkdir(parents=True, exist_ok=True)
    paths["stats"] = out_dir / "stats" / f"{fid}.txt"
    # wall-clock timings live apart so the rest of the tree is byte-reproducible
    paths["stats"].write_text(out.stats.to_text(timings=False))
    (out_dir / "timings").mkdir(parents=True, exist_ok=True)
    paths["timings"] = out_dir / "timings" / f"{fid}.txt"
    paths["timings"].write_text("\n".join(out.stats.timing_lines()) + "\n")
    return paths


# per-process state for the worker pool
_WORKER: dict = {}


def _init_worker(db_path, config_text, kitti_root, out_dir):
    config = AugConfig.from_text(config_text)
    _WORKER.update(db=load_database(db_path, config.spec), config=config,
                   root=kitti_root, out=out_dir)


def _process(frame_id: str) -> FrameStats:
    w = _WORKER
    bundle = read_frame(w["root"], frame_id)
    out = run_frame(bundle, w["db"], w["config"], derive_frame_seed(w["config"].seed, frame_id))
    write_output(out, w["out"])
    return out.stats


def augment_dataset(kitti_root, db_path, out_dir, config: AugConfig,
                    frames: Optional[Sequence[str]] = None, workers: int = 1) -> List[FrameStats]:
    """Augment frames of a KITTI tree into ``out_dir``; results do not depend on ``workers``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = list(frames) if frames is not None else list_frames(kitti_root)
    (out_dir / "config.txt").write_text(config.to_text())
    init_args = (str(db_path), config.to_text(), str(kitti_root), str(out_dir))
    if workers <= 1:
        _init_worker(*init_args)
        stats = [_process(f) for f in frames]
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=init_args) as pool:
            stats = list(pool.map(_process, frames))
    for st in stats:
        total = st.timings.get("total", 0.0)
        if total > LATENCY_BUDGET_S:
            log.warning("frame %s took %.1f ms (budget %.0f ms)", st.frame_id, 1e3 * total, 1e3 * LATENCY_BUDGET_S)
    return stats
