import math
import os

import numpy as np
import pytest

from caaug.errors import MalformedFile, SingularCalib
from caaug.geometry import Box3D, LidarSpec, PointCloud, normalize_angle
from caaug.kitti import (KITTI_ROOT_ENV, Calib, FrameBundle, KittiLabel, bundle_from_labels, format_calib,
                         kitti_root, label_to_lidar_box, lidar_box_to_label, list_frames, load_native_frame, parse_calib, parse_labels, read_frame,
                         read_velodyne, save_native_frame, write_frame, write_velodyne)

KITTI_CALIB = """P0: 7.215377e+02 0.000000e+00 6.095593e+02 0.000000e+00 0.000000e+00 7.215377e+02 1.728540e+02 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00
P2: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03
R0_rect: 9.999239e-01 9.837760e-03 -7.445048e-03 -9.869795e-03 9.999421e-01 -4.278459e-03 7.402527e-03 4.351614e-03 9.999631e-01
Tr_velo_to_cam: 7.533745e-03 -9.999714e-01 -6.166020e-04 -4.069766e-03 1.480249e-02 7.280733e-04 -9.998902e-01 -7.631618e-02 9.998621e-01 7.523790e-03 1.480755e-02 -2.717806e-01
Tr_imu_to_velo: 9.999976e-01 7.553071e-04 -2.035826e-03 -8.086759e-01 -7.854027e-04 9.998898e-01 -1.482298e-02 3.195559e-01 2.024406e-03 1.482454e-02 9.998881e-01 -7.997231e-01
"""

LABELS = """Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59
Pedestrian 0.00 0 0.21 423.17 173.67 433.17 224.03 1.60 0.38 0.30 -5.12 1.85 20.51 0.24
DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10
"""


def angle_diff(a, b):
    return abs(math.remainder(a - b, 2 * math.pi))


def test_velodyne_sizes_and_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.standard_normal((10, 4)).astype(np.float32)
    path = tmp_path / "x.bin"
    arr.tofile(path)
    assert path.stat().st_size == 160
    cloud = read_velodyne(path)
    assert len(cloud) == 10
    write_velodyne(tmp_path / "y.bin", cloud)
    assert (tmp_path / "y.bin").read_bytes() == path.read_bytes()


def test_velodyne_malformed(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\0" * 17)
    with pytest.raises(MalformedFile):
        read_velodyne(path)
    with pytest.raises(OSError):
        read_velodyne(tmp_path / "missing.bin")


def test_parse_real_calib_and_labels():
    calib = parse_calib(KITTI_CALIB)
    calib.check()
    assert "P2" in calib.P and "Tr_imu_to_velo" in calib.extra
    again = parse_calib(format_calib(calib))
    assert np.array_equal(again.R0, calib.R0) and np.array_equal(again.Tr_velo_to_cam, calib.Tr_velo_to_cam)
    labels = parse_labels(LABELS)
    bundle = bundle_from_labels("000000", PointCloud.empty(), labels, calib)
    assert len(bundle.boxes) == 2 and len(bundle.dontcare) == 1
    car = bundle.boxes[0]
    # KITTI car 46.7 m ahead in the camera frame is ~47 m forward in lidar
    assert car.cx == pytest.approx(46.97, abs=0.1) and car.label == "Car"
    assert car.length == 3.64 and car.width == 1.67 and car.height == 1.65


def test_malformed_label_and_calib():
    with pytest.raises(MalformedFile):
        KittiLabel.parse("Car 0 0")
    with pytest.raises(MalformedFile):
        parse_calib("P0: 1 2 3\n")
    bad = Calib(np.eye(3), np.array([[2.0, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0]]))
    with pytest.raises(MalformedFile):
        bad.check()


def test_singular_calib():
    calib = Calib(np.zeros((3, 3)), np.hstack([np.eye(3), np.zeros((3, 1))]))
    with pytest.raises(SingularCalib):
        label_to_lidar_box(parse_labels(LABELS)[0], calib)


def test_identity_calib_lifts_center():
    lab = KittiLabel("Car", 0, 0, 0, (0, 0, 10, 10), 2.0, 1.6, 3.9, 0.0, 0.0, 10.0, 0.0)
    box = label_to_lidar_box(lab, Calib.identity())
    assert (box.cx, box.cy, box.cz) == (0.0, 0.0, 11.0)
    assert box.yaw == pytest.approx(-math.pi / 2)


def test_label_roundtrip_random(tmp_path):
    rng = np.random.default_rng(2)
    calib = parse_calib(KITTI_CALIB)
    for _ in range(500):
        box = Box3D(*rng.uniform(-40, 40, 2), rng.uniform(-2, 1), *rng.uniform(0.3, 5, 3),
                    rng.uniform(-math.pi, math.pi), "Cyclist")
        lab = lidar_box_to_label(box, calib)
        assert lab.alpha == -10 and lab.bbox == (-1, -1, -1, -1)
        back = label_to_lidar_box(KittiLabel.parse(lab.format()), calib)
        assert np.abs(back.center - box.center).max() <= 1e-5
        assert angle_diff(back.yaw, box.yaw) <= 1e-6
        assert (back.length, back.width, back.height) == pytest.approx((box.length, box.width, box.height),
                                                                      abs=1e-6)


def test_write_frame_outputs(tmp_path):
    rng = np.random.default_rng(1)
    cloud = PointCloud(rng.uniform(-10, 10, (50, 3)).astype(np.float32), rng.random(50).astype(np.float32))
    calib = parse_calib(KITTI_CALIB)
    labels = parse_labels(LABELS)
    bundle = bundle_from_labels("000007", cloud, labels, calib)
    bundle.boxes.append(Box3D(5, 5, -1, 4, 2, 1.5, 0.3))
    bundle.labels.append(None)
    paths = write_frame(bundle, tmp_path, {"seed": 3})
    assert set(paths) == {"velodyne", "label", "calib", "manifest"}
    again = read_frame(tmp_path, "000007")
    assert np.array_equal(again.cloud.xyz, cloud.xyz)
    assert len(again.boxes) == 3 and len(again.dontcare) == 1
    assert np.abs(again.boxes[2].center - bundle.boxes[2].center).max() <= 1e-5
    # original labels keep their 2D fields
    assert again.labels[0].bbox == labels[0].bbox
    assert list_frames(tmp_path) == ["000007"]


def test_native_frame_roundtrip(tmp_path):
    spec = LidarSpec(width=1024)
    cloud = PointCloud(np.arange(9.0).reshape(3, 3), np.zeros(3), np.array([-1, -2, 0]))
    bundle = FrameBundle("f", cloud, [Box3D(1, 2, 3, 1, 1, 1, 0.5)], [None], Calib.kitti_like())
    loaded, spec2 = load_native_frame(save_native_frame(tmp_path / "f.npz", bundle, spec))
    assert spec2 == spec and loaded.boxes == bundle.boxes
    assert np.array_equal(loaded.cloud.tags, cloud.tags)


def test_kitti_like_calib_axes():
    calib = Calib.kitti_like()
    cam = calib.lidar_to_rect([[10.0, 2.0, 1.0]])[0]
    assert list(cam) == [-2.0, -1.0, 10.0]
    assert np.allclose(calib.rect_to_lidar([cam])[0], [10, 2, 1])
    lab = lidar_box_to_label(Box3D(10, 0, 0, 4, 2, 1.5, 0.0), calib)
    assert normalize_angle(lab.rotation_y) == pytest.approx(-math.pi / 2)


@pytest.mark.skipif(not os.environ.get(KITTI_ROOT_ENV), reason=f"${KITTI_ROOT_ENV} not set")
def test_real_kitti_frame_roundtrip(tmp_path):
    root = kitti_root()
    fid = list_frames(root)[0]
    bundle = read_frame(root, fid)
    assert len(bundle.cloud) > 1000
    write_frame(bundle, tmp_path)
    again = read_frame(tmp_path, fid)
    assert np.array_equal(again.cloud.xyz, bundle.cloud.xyz)
    for a, b in zip(again.boxes, bundle.boxes):
        assert np.abs(a.center - b.center).max() <= 1e-5
