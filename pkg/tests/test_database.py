import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from caaug.database import (MAGIC, GtDatabase, build_database, compute_rangebin, load_database, make_object,
                            sample_objects, save_database)
from caaug.errors import EmptyObject, FormatVersionMismatch, SpanTooWide
from caaug.geometry import Box3D, LidarSpec, PointCloud, rotate_z
from caaug.placement import rotate_to_column

from conftest import pixel_center_point

SPEC = LidarSpec()


def column_cloud(cols, r=10.0, v=20):
    xyz = np.array([pixel_center_point(c, v, r) for c in cols])
    return PointCloud(xyz, np.linspace(0, 1, len(xyz)))


def test_rangebin_single_column():
    start, rb = compute_rangebin(column_cloud([100] * 5), SPEC)
    assert start == 100 and list(rb) == [5]


def test_rangebin_two_columns():
    start, rb = compute_rangebin(column_cloud([100, 101, 101]), SPEC)
    assert start == 100 and list(rb) == [1, 2]


def test_rangebin_across_seam():
    start, rb = compute_rangebin(column_cloud([2046, 2047, 0, 0, 1]), SPEC)
    assert start == 2046 and list(rb) == [1, 1, 2, 1]


def test_rangebin_errors():
    with pytest.raises(EmptyObject):
        compute_rangebin(PointCloud.empty(), SPEC)
    with pytest.raises(SpanTooWide):
        compute_rangebin(column_cloud([0, 700, 1400]), SPEC)


def test_rangebin_exact_shift(gt_db):
    rng = np.random.default_rng(4)
    objs = gt_db.all_objects()
    for _ in range(30):
        obj = objs[int(rng.integers(len(objs)))]
        k = int(rng.integers(SPEC.width))
        points, _ = rotate_z(obj.points, obj.box, -2 * math.pi * k / SPEC.width)
        start, rb = compute_rangebin(points, SPEC)
        assert start == (obj.start_col + k) % SPEC.width
        assert np.array_equal(rb, obj.rangebin)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(-math.pi, math.pi))
def test_rangebin_sum_preserved_under_any_rotation(idx, dtheta):
    rng = np.random.default_rng(idx)
    cols = rng.integers(300, 320, size=int(rng.integers(1, 40)))
    cloud = column_cloud(cols)
    _, rb = compute_rangebin(cloud, SPEC)
    rotated, _ = rotate_z(cloud, Box3D(10, 0, 0, 1, 1, 1, 0), dtheta)
    _, rb2 = compute_rangebin(rotated, SPEC)
    assert rb.sum() == rb2.sum() == len(cols)
    assert abs(len(rb2) - len(rb)) <= 1


def test_database_invariants(gt_db):
    assert len(gt_db) > 0
    for obj in gt_db.all_objects():
        assert obj.n_g == len(obj.points) >= 1
        assert obj.rangebin[0] > 0 and obj.rangebin[-1] > 0
        # boundary-inclusive containment
        from caaug.geometry import points_in_box_3d
        assert len(points_in_box_3d(obj.points, obj.box)) == obj.n_g


def test_build_database_counts_and_skips():
    box = Box3D(10, 0, 0, 2, 2, 2, 0)
    inside = np.column_stack([np.linspace(9.5, 10.5, 30), np.zeros(30), np.zeros(30)])
    cloud = PointCloud(inside, np.zeros(30))
    empty_box = Box3D(-20, 5, 0, 1, 1, 1, 0)
    db = build_database([("f0", cloud, [box, empty_box])], SPEC)
    assert len(db) == 1 and db.all_objects()[0].n_g == 30
    assert db.skipped == {"no_points": 1}
    assert db.all_objects()[0].source_frame == "f0"


def test_build_database_ignores_other_classes():
    box = Box3D(10, 0, 0, 2, 2, 2, 0, label="Van")
    cloud = PointCloud(np.array([[10.0, 0, 0]]), np.zeros(1))
    assert len(build_database([("f", cloud, [box])], SPEC)) == 0


def test_sample_objects(gt_db):
    assert sample_objects(gt_db, {"Car": 0, "Pedestrian": 0}, np.random.default_rng(0)) == []
    a = sample_objects(gt_db, {"Car": 3, "Cyclist": 2}, np.random.default_rng(5))
    b = sample_objects(gt_db, {"Car": 3, "Cyclist": 2}, np.random.default_rng(5))
    assert [o.obj_id for o in a] == [o.obj_id for o in b]
    assert [o.label for o in a] == ["Car"] * 3 + ["Cyclist"] * 2
    everything = sample_objects(gt_db, {"Pedestrian": 10_000}, np.random.default_rng(1))
    ids = sorted(o.obj_id for o in everything)
    assert ids == sorted(o.obj_id for o in gt_db.objects["Pedestrian"])
    with pytest.raises(ValueError):
        sample_objects(gt_db, {"Car": -1}, np.random.default_rng(0))


def assert_db_equal(a: GtDatabase, b: GtDatabase):
    assert a.spec == b.spec and a.skipped == b.skipped
    assert a.counts() == b.counts()
    for x, y in zip(a.all_objects(), b.all_objects()):
        assert x.box == y.box and x.start_col == y.start_col
        assert x.source_frame == y.source_frame and x.obj_id == y.obj_id
        assert np.array_equal(x.rangebin, y.rangebin)
        assert np.array_equal(x.points.xyz, y.points.xyz)
        assert np.array_equal(x.points.intensity, y.points.intensity)


def test_save_load_roundtrip(tmp_path, gt_db, source_frames):
    path = save_database(gt_db, tmp_path / "db.bin")
    assert_db_equal(gt_db, load_database(path))
    assert (tmp_path / "db.bin.index.json").is_file()
    # deterministic build and serialization
    again = save_database(build_database(source_frames, SPEC), tmp_path / "db2.bin")
    assert path.read_bytes() == again.read_bytes()


def test_load_empty_database(tmp_path):
    db = GtDatabase(SPEC, {"Car": []})
    loaded = load_database(save_database(db, tmp_path / "e.bin"))
    assert len(loaded) == 0 and loaded.spec == SPEC


@pytest.mark.parametrize("damage", ["magic", "version", "header", "truncate"])
def test_corrupted_file_raises(tmp_path, gt_db, damage):
    path = save_database(gt_db, tmp_path / "db.bin")
    data = bytearray(path.read_bytes())
    if damage == "magic":
        data[0:8] = b"NOTADB!\0"
    elif damage == "version":
        data[8:12] = struct.pack("<I", 99)
    elif damage == "header":
        data[20:30] = b"\xff" * 10
    else:
        data = data[:-17]
    path.write_bytes(bytes(data))
    with pytest.raises(FormatVersionMismatch):
        load_database(path)


def test_load_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_database(tmp_path / "missing.bin")


def test_load_under_other_spec_recomputes(tmp_path, gt_db):
    path = save_database(gt_db, tmp_path / "db.bin")
    half = LidarSpec(width=1024)
    loaded = load_database(path, half)
    assert loaded.spec == half
    for obj in loaded.all_objects():
        start, rb = compute_rangebin(obj.points, half)
        assert obj.start_col == start and np.array_equal(obj.rangebin, rb)


def test_make_object_matches_rotation(gt_db):
    obj = gt_db.all_objects()[0]
    target = (obj.start_col + 37) % SPEC.width
    _, box, points = rotate_to_column(obj, target, SPEC.width)
    moved = make_object(box, points, SPEC)
    assert moved.start_col == target and np.array_equal(moved.rangebin, obj.rangebin)
    assert MAGIC.startswith(b"CAAUGDB")
