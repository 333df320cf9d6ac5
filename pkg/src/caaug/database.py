"""Ground-truth object database: per-object points, box and Rangebin.

File format (little-endian)::

    bytes 0..7    magic b"CAAUGDB\\0"
    bytes 8..11   uint32 format version (currently 1)
    bytes 12..19  uint64 header length L
    next L bytes  UTF-8 JSON header: {"spec": {...}, "objects": [...], "skipped": {...}}
    payload       per object, in header order: xyz float64 (n, 3),
                  intensity float64 (n,), rangebin int64 (l,)

A human-readable sidecar ``<path>.index.json`` lists per-class counts and
the lidar spec; it is informational and never read back.
"""
from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyObject, FormatVersionMismatch, SpanTooWide
from .geometry import Box3D, LidarSpec, PointCloud, point_ranges, points_in_box_3d, project_columns

MAGIC = b"CAAUGDB\0"
FORMAT_VERSION = 1
DEFAULT_CLASSES = ("Car", "Pedestrian", "Cyclist")
DEFAULT_SAMPLE_COUNTS = {"Car": 15, "Pedestrian": 10, "Cyclist": 10}


def compute_rangebin(points, spec: LidarSpec) -> Tuple[int, np.ndarray]:
    """Column histogram of an object's points over its minimal azimuth arc.

    Returns:
        (start_col, rangebin) where ``rangebin[t]`` counts points in column
        ``(start_col + t) % W``. Both ends of ``rangebin`` are nonzero.
    """
    xyz = points.xyz if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64).reshape(-1, 3)
    xyz = xyz[point_ranges(xyz) > 0]
    if len(xyz) == 0:
        raise EmptyObject("object has no points with nonzero range")
    W = spec.width
    counts = np.bincount(project_columns(xyz, spec), minlength=W)
    occupied = np.flatnonzero(counts)
    if len(occupied) == 1:
        start, span = int(occupied[0]), 1
    else:
        # the arc we keep is the complement of the widest empty gap
        gaps = np.diff(np.append(occupied, occupied[0] + W))
        widest = int(np.argmax(gaps))
        start = int(occupied[(widest + 1) % len(occupied)])
        span = W - int(gaps[widest]) + 1
    if span > W // 2:
        raise SpanTooWide(f"object spans {span} of {W} columns")
    cols = (start + np.arange(span)) % W
    return start, counts[cols].astype(np.int64)


@dataclass
class GtObject:
    box: Box3D
    points: PointCloud
    rangebin: np.ndarray
    start_col: int
    source_frame: str = ""
    obj_id: int = -1

    @property
    def n_g(self) -> int:
        return int(self.rangebin.sum())

    @property
    def l_g(self) -> int:
        return len(self.rangebin)

    @property
    def label(self) -> str:
        return self.box.label


@dataclass
class GtDatabase:
    spec: LidarSpec
    objects: Dict[str, List[GtObject]] = field(default_factory=dict)
    skipped: Dict[str, int] = field(default_factory=dict)

    def __len__(self):
        return sum(len(v) for v in self.objects.values())

    def all_objects(self) -> List[GtObject]:
        return [o for label in sorted(self.objects) for o in self.objects[label]]

    def counts(self) -> Dict[str, int]:
        return {k: len(v) for k, v in sorted(self.objects.items())}

    def with_spec(self, spec: LidarSpec) -> "GtDatabase":
        """Recompute every rangebin under another spec; objects that no longer fit are skipped."""
        if spec == self.spec:
            return self
        out = GtDatabase(spec, {}, dict(self.skipped))
        for label, objs in self.objects.items():
            kept = []
            for obj in objs:
                try:
                    start, rb = compute_rangebin(obj.points, spec)
                except SpanTooWide:
                    out.skipped["span_too_wide"] = out.skipped.get("span_too_wide", 0) + 1
                    continue
                kept.append(GtObject(obj.box, obj.points, rb, start, obj.source_frame, obj.obj_id))
            out.objects[label] = kept
        return out


def make_object(box: Box3D, points: PointCloud, spec: LidarSpec, source_frame="", obj_id=-1) -> GtObject:
    start, rangebin = compute_rangebin(points, spec)
    return GtObject(box, PointCloud(points.xyz, points.intensity), rangebin, start, source_frame, obj_id)


def build_database(frames: Iterable, spec: LidarSpec, classes: Sequence[str] = DEFAULT_CLASSES) -> GtDatabase:
    """Collect every labelled object with at least one interior point.

    Args:
        frames: iterable of ``(frame_id, cloud, boxes)`` tuples or objects with
            ``frame_id``, ``cloud`` and ``boxes`` attributes.
        spec: projection used for the stored rangebins.
        classes: labels to keep; other boxes are ignored silently.
    """
    db = GtDatabase(spec, {c: [] for c in classes}, {})
    skipped: Counter = Counter()
    next_id = 0
    for frame in frames:
        if isinstance(frame, tuple):
            frame_id, cloud, boxes = frame
        else:
            frame_id, cloud, boxes = frame.frame_id, frame.cloud, frame.boxes
        for box in boxes:
            if box.label not in db.objects:
                continue
            idx = points_in_box_3d(cloud, box)
            if len(idx) == 0:
                skipped["no_points"] += 1
                continue
            try:
                obj = make_object(box, cloud.subset(idx), spec, str(frame_id), next_id)
            except EmptyObject:
                skipped["no_points"] += 1
                continue
            except SpanTooWide:
                skipped["span_too_wide"] += 1
                continue
            db.objects[box.label].append(obj)
            next_id += 1
    db.skipped = dict(sorted(skipped.items()))
    return db


def sample_objects(db: GtDatabase, counts: Mapping[str, int], rng: np.random.Generator) -> List[GtObject]:
    """Uniform sampling without replacement, class by class in ``counts`` order."""
    out: List[GtObject] = []
    for label, k in counts.items():
        if k < 0:
            raise ValueError(f"negative sample count for {label}")
        pool = db.objects.get(label, [])
        if k == 0 or not pool:
            continue
        picks = rng.choice(len(pool), size=min(k, len(pool)), replace=False)
        out.extend(pool[i] for i in picks)
    return out


def _header(db: GtDatabase) -> dict:
    objects = []
    for obj in db.all_objects():
        objects.append({
            "box": obj.box.to_dict(),
            "n_points": len(obj.points),
            "rangebin_len": obj.l_g,
            "start_col": obj.start_col,
            "source_frame": obj.source_frame,
            "obj_id": obj.obj_id,
        })
    return {"spec": db.spec.to_dict(), "classes": sorted(db.objects),
            "objects": objects, "skipped": db.skipped}


def save_database(db: GtDatabase, path) -> Path:
    path = Path(path)
    header = json.dumps(_header(db), sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        f.write(header)
        for obj in db.all_objects():
            f.write(np.ascontiguousarray(obj.points.xyz, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(obj.points.intensity, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(obj.rangebin, dtype="<i8").tobytes())
    index = {"format_version": FORMAT_VERSION, "spec": db.spec.to_dict(),
             "counts": db.counts(), "skipped": db.skipped}
    Path(str(path) + ".index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return path


def load_database(path, spec: Optional[LidarSpec] = None) -> GtDatabase:
    """Read a database file; with ``spec`` given and different, rangebins are recomputed."""
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:8] != MAGIC:
        raise FormatVersionMismatch(f"{path}: not a caaug database")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    try:
        header = json.loads(data[20:20 + hlen].decode("utf-8"))
        stored_spec = LidarSpec.from_dict(header["spec"])
        entries = header["objects"]
        expected = 20 + hlen + sum(32 * e["n_points"] + 8 * e["rangebin_len"] for e in entries)
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatVersionMismatch(f"{path}: unreadable header") from exc
    if expected != len(data):
        raise FormatVersionMismatch(f"{path}: payload size does not match header")
    db = GtDatabase(stored_spec, {c: [] for c in header.get("classes", [])}, dict(header.get("skipped", {})))
    offset = 20 + hlen
    for entry in entries:
        n, l = entry["n_points"], entry["rangebin_len"]
        xyz = np.frombuffer(data, "<f8", 3 * n, offset).reshape(n, 3).astype(np.float64)
        offset += 24 * n
        intensity = np.frombuffer(data, "<f8", n, offset).astype(np.float64)
        offset += 8 * n
        rangebin = np.frombuffer(data, "<i8", l, offset).astype(np.int64)
        offset += 8 * l
        box = Box3D.from_dict(entry["box"])
        obj = GtObject(box, PointCloud(xyz, intensity), rangebin, int(entry["start_col"]),
                       entry["source_frame"], int(entry["obj_id"]))
        db.objects.setdefault(box.label, []).append(obj)
    if spec is not None:
        db = db.with_spec(spec)
    return db
