"""KITTI velodyne/label/calib readers and writers, and camera<->lidar box conversion.

Layouts:
    velodyne ``.bin``: little-endian float32 records ``x y z intensity`` (16 bytes).
    label ``.txt``: 15 whitespace-separated fields per object (optional 16th score).
    calib ``.txt``: ``KEY: v1 v2 ...`` rows (P0-P3, R0_rect, Tr_velo_to_cam, Tr_imu_to_velo).
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import MalformedFile, SingularCalib
from .geometry import Box3D, LidarSpec, PointCloud, normalize_angle

KITTI_OBJECT_TYPES = ("Car", "Van", "Truck", "Pedestrian", "Person_sitting", "Cyclist", "Tram", "Misc")
KITTI_ROOT_ENV = "CAAUG_KITTI_ROOT"


def read_velodyne(path) -> PointCloud:
    data = Path(path).read_bytes()
    if len(data) % 16:
        raise MalformedFile(f"{path}: size {len(data)} is not a multiple of 16 bytes")
    arr = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    return PointCloud(arr[:, :3].astype(np.float64), arr[:, 3].astype(np.float64))


def write_velodyne(path, cloud: PointCloud) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.column_stack([cloud.xyz, cloud.intensity]).astype("<f4")
    path.write_bytes(arr.tobytes())
    return path


@dataclass
class Calib:
    R0: np.ndarray
    Tr_velo_to_cam: np.ndarray
    P: Dict[str, np.ndarray] = field(default_factory=dict)
    extra: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def identity(cls) -> "Calib":
        return cls(np.eye(3), np.hstack([np.eye(3), np.zeros((3, 1))]))

    @classmethod
    def kitti_like(cls) -> "Calib":
        """Axis permutation between lidar (x fwd, y left, z up) and camera (x right, y down, z fwd)."""
        tr = np.array([[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [1.0, 0.0, 0.0, 0.0]])
        return cls(np.eye(3), tr)

    @property
    def velo_to_rect(self) -> np.ndarray:
        """4x4 homogeneous lidar -> rectified camera transform."""
        m = np.eye(4)
        m[:3, :3] = self.R0
        tr = np.vstack([self.Tr_velo_to_cam, [0.0, 0.0, 0.0, 1.0]])
        return m @ tr

    def lidar_to_rect(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        hom = np.hstack([pts, np.ones((len(pts), 1))])
        return (hom @ self.velo_to_rect.T)[:, :3]

    def rect_to_lidar(self, pts) -> np.ndarray:
        m = self.velo_to_rect
        if abs(np.linalg.det(m)) < 1e-12 or not np.all(np.isfinite(m)):
            raise SingularCalib("velodyne-to-camera transform is not invertible")
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        hom = np.hstack([pts, np.ones((len(pts), 1))])
        return np.linalg.solve(m, hom.T).T[:, :3]

    def check(self, tol: float = 1e-3) -> None:
        """Raise ``MalformedFile`` unless matrices are finite and Tr's rotation is orthonormal."""
        rot = self.Tr_velo_to_cam[:, :3]
        if not (np.all(np.isfinite(self.R0)) and np.all(np.isfinite(self.Tr_velo_to_cam))):
            raise MalformedFile("calibration contains non-finite values")
        if np.abs(rot @ rot.T - np.eye(3)).max() > tol:
            raise MalformedFile("Tr_velo_to_cam rotation is not orthonormal")


def parse_calib(text: str) -> Calib:
    rows: Dict[str, np.ndarray] = {}
    for line in text.splitlines():
        if ":" not in line:
            continue
        key, values = line.split(":", 1)
        if values.strip():
            rows[key.strip()] = np.array([float(v) for v in values.split()])
    try:
        r0 = rows.pop("R0_rect", None)
        if r0 is None:
            r0 = rows.pop("R0")
        tr = rows.pop("Tr_velo_to_cam", None)
        if tr is None:
            tr = rows.pop("Tr_velo_cam")
        calib = Calib(r0.reshape(3, 3), tr.reshape(3, 4))
    except (KeyError, ValueError) as exc:
        raise MalformedFile("calibration lacks R0_rect or Tr_velo_to_cam") from exc
    for key, vals in rows.items():
        if key.startswith("P") and vals.size == 12:
            calib.P[key] = vals.reshape(3, 4)
        else:
            calib.extra[key] = vals
    return calib


def read_calib(path) -> Calib:
    return parse_calib(Path(path).read_text())


def format_calib(calib: Calib) -> str:
    def row(key, m):
        return f"{key}: " + " ".join(f"{v:.12e}" for v in np.asarray(m).reshape(-1))

    lines = [row(k, calib.P[k]) for k in sorted(calib.P)]
    lines.append(row("R0_rect", calib.R0))
    lines.append(row("Tr_velo_to_cam", calib.Tr_velo_to_cam))
    lines.extend(row(k, v) for k, v in sorted(calib.extra.items()))
    return "\n".join(lines) + "\n"


@dataclass
class KittiLabel:
    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox: tuple
    h: float
    w: float
    l: float
    x: float
    y: float
    z: float
    rotation_y: float
    score: Optional[float] = None

    @property
    def is_dontcare(self) -> bool:
        return self.type == "DontCare"

    @property
    def difficulty(self) -> int:
        """KITTI easy/moderate/hard as 0/1/2, -1 when none applies."""
        height = self.bbox[3] - self.bbox[1]
        if height >= 40 and self.occluded <= 0 and self.truncated <= 0.15:
            return 0
        if height >= 25 and self.occluded <= 1 and self.truncated <= 0.3:
            return 1
        if height >= 25 and self.occluded <= 2 and self.truncated <= 0.5:
            return 2
        return -1

    @classmethod
    def parse(cls, line: str) -> "KittiLabel":
        f = line.split()
        if len(f) not in (15, 16):
            raise MalformedFile(f"label line has {len(f)} fields: {line!r}")
        vals = [float(v) for v in f[1:]]
        return cls(f[0], vals[0], int(vals[1]), vals[2], tuple(vals[3:7]), vals[7], vals[8], vals[9],
                   vals[10], vals[11], vals[12], vals[13], vals[14] if len(vals) > 14 else None)

    def format(self, precision: int = 6) -> str:
        p = precision
        fields = [self.type, f"{self.truncated:.2f}", str(int(self.occluded)), f"{self.alpha:.{p}f}"]
        fields += [f"{v:.2f}" for v in self.bbox]
        fields += [f"{v:.{p}f}" for v in (self.h, self.w, self.l, self.x, self.y, self.z, self.rotation_y)]
        if self.score is not None:
            fields.append(f"{self.score:.4f}")
        return " ".join(fields)


def parse_labels(text: str) -> List[KittiLabel]:
    return [KittiLabel.parse(line) for line in text.splitlines() if line.strip()]


def read_labels(path) -> List[KittiLabel]:
    return parse_labels(Path(path).read_text())


def label_to_lidar_box(label: KittiLabel, calib: Calib) -> Box3D:
    """Camera bottom-center label -> lidar volumetric-center box."""
    bottom = calib.rect_to_lidar([[label.x, label.y, label.z]])[0]
    return Box3D(bottom[0], bottom[1], bottom[2] + label.h / 2.0, label.l, label.w, label.h,
                 normalize_angle(-label.rotation_y - math.pi / 2.0), label.type, label.difficulty)


def lidar_box_to_label(box: Box3D, calib: Calib, template: Optional[KittiLabel] = None) -> KittiLabel:
    """Inverse of :func:`label_to_lidar_box`.

    2D fields come from ``template`` when given, otherwise sentinels
    (truncated -1, occluded -1, alpha -10, bbox -1).
    """
    cam = calib.lidar_to_rect([[box.cx, box.cy, box.cz - box.height / 2.0]])[0]
    ry = normalize_angle(-box.yaw - math.pi / 2.0)
    if template is not None:
        return KittiLabel(box.label, template.truncated, template.occluded, template.alpha, template.bbox,
                          box.height, box.width, box.length, cam[0], cam[1], cam[2], ry, template.score)
    return KittiLabel(box.label, -1.0, -1, -10.0, (-1.0, -1.0, -1.0, -1.0),
                      box.height, box.width, box.length, cam[0], cam[1], cam[2], ry)


@dataclass
class FrameBundle:
    """One frame: cloud, lidar-frame boxes and the KITTI labels they came from.

    ``labels[i]`` is the label behind ``boxes[i]``, or ``None`` for an
    inserted object. DontCare rows are carried separately.
    """

    frame_id: str
    cloud: PointCloud
    boxes: List[Box3D]
    labels: List[Optional[KittiLabel]]
    calib: Calib
    dontcare: List[KittiLabel] = field(default_factory=list)

    def label_lines(self) -> List[str]:
        out = []
        for box, tmpl in zip(self.boxes, self.labels):
            out.append(lidar_box_to_label(box, self.calib, tmpl).format())
        out.extend(d.format() for d in self.dontcare)
        return out


def bundle_from_labels(frame_id, cloud: PointCloud, labels: Sequence[KittiLabel], calib: Calib) -> FrameBundle:
    boxes, kept, dontcare = [], [], []
    for lab in labels:
        if lab.is_dontcare:
            dontcare.append(lab)
            continue
        boxes.append(label_to_lidar_box(lab, calib))
        kept.append(lab)
    return FrameBundle(str(frame_id), cloud, boxes, kept, calib, dontcare)


def kitti_root(root=None) -> Path:
    root = root or os.environ.get(KITTI_ROOT_ENV)
    if not root:
        raise ValueError(f"no KITTI root given and ${KITTI_ROOT_ENV} is unset")
    return Path(root)


def split_dir(root) -> Path:
    root = Path(root)
    return root / "training" if (root / "training" / "velodyne").is_dir() else root


def list_frames(root, imageset: Optional[str] = "train") -> List[str]:
    """Frame ids from ``ImageSets/<imageset>.txt`` when present, else every velodyne file."""
    root = Path(root)
    listing = root / "ImageSets" / f"{imageset}.txt" if imageset else None
    if listing is not None and listing.is_file():
        return [line.strip() for line in listing.read_text().splitlines() if line.strip()]
    return sorted(p.stem for p in (split_dir(root) / "velodyne").glob("*.bin"))


def read_frame(root, frame_id: str) -> FrameBundle:
    base = split_dir(root)
    cloud = read_velodyne(base / "velodyne" / f"{frame_id}.bin")
    calib = read_calib(base / "calib" / f"{frame_id}.txt")
    label_path = base / "label_2" / f"{frame_id}.txt"
    labels = read_labels(label_path) if label_path.is_file() else []
    return bundle_from_labels(frame_id, cloud, labels, calib)


def write_frame(bundle: FrameBundle, out_dir, manifest: Optional[dict] = None) -> Dict[str, Path]:
    """Write velodyne, labels, calib and (optionally) a JSON manifest in a KITTI-like tree."""
    out = Path(out_dir)
    fid = bundle.frame_id
    paths = {"velodyne": write_velodyne(out / "velodyne" / f"{fid}.bin", bundle.cloud)}
    for sub in ("label_2", "calib"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    paths["label"] = out / "label_2" / f"{fid}.txt"
    lines = bundle.label_lines()
    paths["label"].write_text("\n".join(lines) + ("\n" if lines else ""))
    paths["calib"] = out / "calib" / f"{fid}.txt"
    paths["calib"].write_text(format_calib(bundle.calib))
    if manifest is not None:
        (out / "manifest").mkdir(parents=True, exist_ok=True)
        paths["manifest"] = out / "manifest" / f"{fid}.json"
        paths["manifest"].write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return paths


def write_kitti_frame(root, bundle: FrameBundle) -> Dict[str, Path]:
    """Write a frame into ``<root>/training`` (used to stage synthetic datasets)."""
    return write_frame(bundle, Path(root) / "training")


def save_native_frame(path, bundle: FrameBundle, spec: LidarSpec) -> Path:
    """Self-describing ``.npz`` frame: points, tags, boxes, calib and spec."""
    header = {"frame_id": bundle.frame_id, "spec": spec.to_dict(),
              "boxes": [b.to_dict() for b in bundle.boxes]}
    arrays = {"xyz": bundle.cloud.xyz, "intensity": bundle.cloud.intensity,
              "R0": bundle.calib.R0, "Tr": bundle.calib.Tr_velo_to_cam,
              "header": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    if bundle.cloud.tags is not None:
        arrays["tags"] = bundle.cloud.tags
    path = Path(path)
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    return path


def load_native_frame(path):
    """Returns ``(bundle, spec)``; labels are synthesized from the stored boxes."""
    with np.load(path) as z:
        header = json.loads(bytes(z["header"]).decode())
        tags = z["tags"] if "tags" in z.files else None
        cloud = PointCloud(z["xyz"], z["intensity"], tags)
        calib = Calib(z["R0"], z["Tr"])
    boxes = [Box3D.from_dict(b) for b in header["boxes"]]
    bundle = FrameBundle(header["frame_id"], cloud, boxes, [None] * len(boxes), calib)
    return bundle, LidarSpec.from_dict(header["spec"])
