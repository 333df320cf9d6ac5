import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from caaug.database import GtDatabase, load_database, save_database
from caaug.errors import ConfigError, SpecMismatch
from caaug.geometry import Box3D, LidarSpec
from caaug.occlusion import Strategy
from caaug.pipeline import (AugConfig, FrameStats, GlobalTransform, augment_dataset, augment_frame,
                            derive_frame_seed, frame_streams, run_frame)
from caaug.placement import CollisionMode, PlacementConfig
from caaug.render import range_to_rgb, read_ppm, render_rgb, write_ppm
from caaug.validate import validate_output

SPEC = LidarSpec()


def test_config_text_roundtrip():
    cfg = AugConfig(strategy="drilling", window="kitti_front", seed=17, sample_counts={"Car": 3},
                    placement=PlacementConfig(threshold=0.7, update_validspace=True, max_angle_retries=5,
                                              collision_mode=CollisionMode.STRICT_POLYGON),
                    rotation_range=(-0.1, 0.2), flip_prob=0.25)
    back = AugConfig.from_text(cfg.to_text())
    assert back == cfg
    assert back.to_text() == cfg.to_text()


def test_config_defaults_and_errors():
    cfg = AugConfig.from_text("# nothing set\n")
    assert cfg.spec == SPEC and cfg.strategy is Strategy.CULLING
    assert cfg.placement.threshold == 0.8 and cfg.pillar_size == 0.25 and cfg.sigma == 0.4
    assert cfg.sample_counts == {"Car": 15, "Pedestrian": 10, "Cyclist": 10}
    assert cfg.rotation_range == (-math.pi / 4, math.pi / 4) and cfg.scale_range == (0.95, 1.05)
    with pytest.raises(ConfigError):
        AugConfig.from_text("bogus_key = 1\n")
    with pytest.raises(ConfigError):
        AugConfig.from_text("threshold = 1.5\n")
    with pytest.raises(ConfigError):
        AugConfig.from_text("window = 10, 99999\n")
    with pytest.raises(ConfigError):
        AugConfig.from_text("no equals sign\n")


def test_frame_seeds_are_stable_and_distinct():
    assert derive_frame_seed(0, "000001") == derive_frame_seed(0, "000001")
    seeds = {derive_frame_seed(0, f"{i:06d}") for i in range(100)}
    assert len(seeds) == 100
    assert derive_frame_seed(1, "000001") != derive_frame_seed(0, "000001")
    a = [g.random() for g in frame_streams(5)]
    b = [g.random() for g in frame_streams(5)]
    assert a == b and len(set(a)) == 3


@settings(max_examples=100, deadline=None)
@given(st.floats(-math.pi, math.pi), st.booleans(), st.floats(0.9, 1.1))
def test_global_transform_inverts(angle, flip, scale):
    rng = np.random.default_rng(0)
    xyz = rng.uniform(-50, 50, (100, 3))
    t = GlobalTransform(angle, flip, scale)
    assert np.abs(t.invert_points(t.apply_points(xyz)) - xyz).max() <= 1e-6
    box = Box3D(3, -4, 0.5, 4, 2, 1.5, 0.7)
    back = t.invert_box(t.apply_box(box))
    assert np.abs(back.center - box.center).max() <= 1e-9
    assert abs(math.remainder(back.yaw - box.yaw, 2 * math.pi)) <= 1e-9


def test_rotation_then_inverse_rotation():
    xyz = np.random.default_rng(1).uniform(-50, 50, (1000, 3))
    there = GlobalTransform(0.6).apply_points(xyz)
    back = GlobalTransform(-0.6).apply_points(there)
    assert np.abs(back - xyz).max() <= 1e-6


def test_global_transform_box_follows_points():
    t = GlobalTransform(0.4, True, 1.03)
    box = Box3D(10, 2, -1, 4, 2, 1.5, 0.3)
    inside = np.array([[10.0, 2.0, -1.0], [11.5, 2.5, -0.5]])
    from caaug.geometry import points_in_box_3d
    assert len(points_in_box_3d(t.apply_points(inside), t.apply_box(box), 1e-9)) == 2


def test_empty_database_leaves_frame_alone(wall_frames):
    bundle = wall_frames[0]
    cfg = AugConfig(global_augment=False)
    out, stats = augment_frame(bundle, GtDatabase(SPEC, {}), cfg, 1)
    assert stats.candidates == 0 and stats.accepted == 0
    assert np.array_equal(out.cloud.xyz, bundle.cloud.xyz)
    assert len(out.boxes) == len(bundle.boxes)


def test_spec_mismatch(gt_db, wall_frames):
    cfg = AugConfig(spec=LidarSpec(width=1024))
    with pytest.raises(SpecMismatch):
        run_frame(wall_frames[0], gt_db, cfg, 0)


@pytest.mark.parametrize("strategy", ["none", "naive", "culling", "drilling"])
def test_run_frame_invariants(gt_db, wall_frames, strategy):
    bundle = wall_frames[1]
    cfg = AugConfig(strategy=strategy)
    out = run_frame(bundle, gt_db, cfg, 42)
    st_ = out.stats
    assert st_.accepted + st_.rejected == st_.candidates
    assert len(out.bundle.boxes) == len(bundle.boxes) + st_.accepted - st_.culled
    assert len(out.tags) == len(out.bundle.cloud)
    # the recorded transform maps the insertion frame to the output
    assert np.abs(out.transform.apply_points(out.insertion_xyz) - out.bundle.cloud.xyz).max() <= 1e-9
    for p in out.placement.accepted:
        assert abs(p.box.planar_range - p.obj.box.planar_range) <= 1e-9
    again = run_frame(bundle, gt_db, cfg, 42)
    assert np.array_equal(again.bundle.cloud.xyz, out.bundle.cloud.xyz)
    assert again.manifest == out.manifest


def test_stats_text_roundtrip(gt_db, wall_frames):
    out = run_frame(wall_frames[2], gt_db, AugConfig(), 3)
    back = FrameStats.from_text(out.stats.to_text())
    assert back.candidates == out.stats.candidates and back.rejections == out.stats.rejections
    assert back.ratios == pytest.approx(out.stats.ratios, abs=1e-6)
    assert set(back.timings) == {"partition", "validspace", "placement", "occlusion", "global", "total"}
    assert "timing" not in out.stats.to_text(timings=False)


def test_augment_dataset_and_validate(tmp_path, gt_db, kitti_tree):
    db_path = save_database(gt_db, tmp_path / "db.bin")
    out_dir = tmp_path / "out"
    frames = ["000100", "000101"]
    stats = augment_dataset(kitti_tree, db_path, out_dir, AugConfig(seed=5), frames)
    assert [s.frame_id for s in stats] == frames
    for sub in ("velodyne", "label_2", "calib", "manifest", "aux", "stats", "timings"):
        assert len(list((out_dir / sub).iterdir())) == 2
    assert validate_output(out_dir) == []


def test_validate_catches_corrupted_box(tmp_path, gt_db, kitti_tree):
    db_path = save_database(gt_db, tmp_path / "db.bin")
    out_dir = tmp_path / "out"
    augment_dataset(kitti_tree, db_path, out_dir, AugConfig(seed=5), ["000100"])
    label = out_dir / "label_2" / "000100.txt"
    manifest = json.loads((out_dir / "manifest" / "000100.json").read_text())
    target = next(e["label_index"] for e in manifest["inserted"] if not e["culled"])
    lines = label.read_text().splitlines()
    fields = lines[target].split()
    fields[11] = f"{float(fields[11]) + 3.0:.6f}"
    lines[target] = " ".join(fields)
    label.write_text("\n".join(lines) + "\n")
    names = {v.invariant for v in validate_output(out_dir)}
    assert "label-consistency" in names


def test_render_ppm_roundtrip(tmp_path, wall_frames):
    cloud = wall_frames[0].cloud
    tags = np.where(np.arange(len(cloud)) % 50 == 0, 0, -1)
    rgb = render_rgb(cloud, SPEC, tags)
    assert rgb.shape == (SPEC.height, SPEC.width, 3) and rgb.dtype == np.uint8
    assert (rgb == [0, 255, 0]).all(axis=-1).any()
    path = write_ppm(tmp_path / "x.ppm", rgb)
    assert path.read_bytes().startswith(b"P6\n")
    assert np.array_equal(read_ppm(path), rgb)
    near, far = range_to_rgb(np.array([1.0, 50.0]))
    assert not np.array_equal(near, far)
