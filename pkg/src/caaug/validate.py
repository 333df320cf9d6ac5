"""Post-hoc invariant checks over an augmentation output tree."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np

from .geometry import Box3D, bev_corners, points_in_box_3d, project_points
from .kitti import label_to_lidar_box, read_calib, read_labels, read_velodyne
from .pipeline import AugConfig, GlobalTransform
from .placement import _bev_rows, _corners_inside, feasibility_vector, occlusion_threshold, update_validspace

LABEL_TOL = 1e-3       # labels are written with 6 decimals
CORNER_MARGIN = 1e-4   # a corner must be this far inside to count as a collision
RANGE_TOL = 1e-9


@dataclass
class Violation:
    frame_id: str
    invariant: str
    message: str

    def __str__(self):
        return f"{self.frame_id}: {self.invariant}: {self.message}"


def _implied_column(original_col: int, original_box: Box3D, box: Box3D, width: int) -> int:
    dtheta = math.atan2(box.cy, box.cx) - math.atan2(original_box.cy, original_box.cx)
    shift = int(round(-dtheta * width / (2 * math.pi)))
    return (original_col + shift) % width


def validate_frame(out_dir: Path, frame_id: str, config: AugConfig) -> List[Violation]:
    bad: List[Violation] = []

    def fail(invariant, message):
        bad.append(Violation(frame_id, invariant, message))

    manifest = json.loads((out_dir / "manifest" / f"{frame_id}.json").read_text())
    with np.load(out_dir / "aux" / f"{frame_id}.npz") as z:
        tags, ins_xyz, validspace = z["tags"], z["insertion_xyz"], z["validspace"]
    cloud = read_velodyne(out_dir / "velodyne" / f"{frame_id}.bin")
    calib = read_calib(out_dir / "calib" / f"{frame_id}.txt")
    labels = [lab for lab in read_labels(out_dir / "label_2" / f"{frame_id}.txt") if not lab.is_dontcare]
    transform = GlobalTransform.from_dict(manifest["global_transform"])
    spec = config.spec

    if len(cloud) != len(tags) or len(ins_xyz) != len(tags):
        fail("aux-consistency", f"{len(cloud)} output points vs {len(tags)} provenance tags")
        return bad
    back = transform.invert_points(cloud.xyz)
    if len(back) and np.abs(back - ins_xyz).max() > LABEL_TOL:
        fail("aux-consistency", "output points do not match the recorded insertion-frame points")

    inserted = manifest["inserted"]
    live = [e for e in inserted if not e["culled"]]
    expected = manifest["n_scene_labels"] + len(live)
    if len(labels) != expected:
        fail("label-count", f"{len(labels)} labels, expected {expected}")
        return bad
    boxes = [transform.invert_box(label_to_lidar_box(lab, calib)) for lab in labels]

    for e in inserted:
        recorded = Box3D.from_dict(e["box"])
        original = Box3D.from_dict(e["original_box"])
        if abs(recorded.planar_range - original.planar_range) > RANGE_TOL:
            fail("range-preservation", f"object {e['insert_id']} range moved by "
                 f"{recorded.planar_range - original.planar_range:.3e} m")

    p = config.placement
    V = np.array(validspace, dtype=np.float64)
    rows = _bev_rows(boxes)
    for e in inserted:
        recorded = Box3D.from_dict(e["box"])
        if e["culled"]:
            # culled objects were still placed, so they still updated V
            if p.update_validspace:
                V = update_validspace(V, recorded.planar_range, e["start_col"], len(e["rangebin"]))
            continue
        i = e["label_index"]
        box = boxes[i]
        if (np.abs(box.center - recorded.center).max() > LABEL_TOL
                or abs(math.remainder(box.yaw - recorded.yaw, 2 * math.pi)) > LABEL_TOL):
            fail("label-consistency", f"object {e['insert_id']} label box differs from its placement")

        if p.rotate and p.check_feasibility:
            original = Box3D.from_dict(e["original_box"])
            col = _implied_column(e["original_start_col"], original, box, spec.width)
            ratios = feasibility_vector(V, e["rangebin"], occlusion_threshold(box), p.literal_inequality)
            if not ratios[col] > p.threshold:
                fail("feasibility", f"object {e['insert_id']} has unoccluded fraction {ratios[col]:.3f} "
                     f"at column {col}, needs > {p.threshold}")
        if p.update_validspace:
            V = update_validspace(V, recorded.planar_range, e["start_col"], len(e["rangebin"]))

        others = np.delete(rows, i, axis=0)
        corners = bev_corners(box)
        if _corners_inside(corners, others, -CORNER_MARGIN).any():
            fail("collision", f"object {e['insert_id']} has a corner inside another box")

        pts = ins_xyz[tags == e["insert_id"]]
        if len(points_in_box_3d(pts, box, LABEL_TOL)) != len(pts):
            fail("points-in-box", f"object {e['insert_id']} points fall outside its label box")

        if manifest["strategy"] == "culling":
            retained = int((tags == e["insert_id"]).sum())
            if retained < config.culling_min_points or retained < config.culling_min_fraction * e["n_g"]:
                fail("culling-threshold", f"object {e['insert_id']} kept with {retained}/{e['n_g']} points")

    if manifest["strategy"] == "drilling":
        proj = project_points(ins_xyz, spec)
        pix = (proj.v * spec.width + proj.u)[proj.in_fov]
        t = tags[proj.in_fov]
        n = spec.width * spec.height
        mixed = np.bincount(pix[t >= 0], minlength=n).astype(bool) & np.bincount(pix[t < 0], minlength=n).astype(bool)
        if mixed.any():
            fail("drilling-exclusivity", f"{int(mixed.sum())} pixels hold background and object points")
    return bad


def validate_output(out_dir) -> List[Violation]:
    out_dir = Path(out_dir)
    config = AugConfig.load(out_dir / "config.txt")
    frames = sorted(p.stem for p in (out_dir / "manifest").glob("*.json"))
    violations: List[Violation] = []
    for fid in frames:
        violations.extend(validate_frame(out_dir, fid, config))
    return violations
