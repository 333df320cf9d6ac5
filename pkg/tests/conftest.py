import math

import numpy as np
import pytest

from caaug.database import build_database
from caaug.geometry import LidarSpec
from caaug.kitti import write_kitti_frame
from caaug.synthetic import generate_synthetic_scene, random_source_scene, random_wall_scene

DEFAULT_SPEC = LidarSpec()


def pixel_center_point(u, v, r, spec=DEFAULT_SPEC):
    """A point at range r on the beam through the center of pixel (u, v)."""
    az = math.pi * (1.0 - 2.0 * (u + 0.5) / spec.width)
    el = spec.fov_down + (1.0 - (v + 0.5) / spec.height) * spec.fov
    return np.array([r * math.cos(el) * math.cos(az), r * math.cos(el) * math.sin(az), r * math.sin(el)])


@pytest.fixture(scope="session")
def spec():
    return DEFAULT_SPEC


@pytest.fixture(scope="session")
def source_frames():
    rng = np.random.default_rng(1234)
    return [generate_synthetic_scene(random_source_scene(rng, DEFAULT_SPEC), rng, f"{i:06d}") for i in range(6)]


@pytest.fixture(scope="session")
def gt_db(source_frames):
    return build_database(source_frames, DEFAULT_SPEC)


@pytest.fixture(scope="session")
def wall_frames():
    rng = np.random.default_rng(99)
    return [generate_synthetic_scene(random_wall_scene(rng, DEFAULT_SPEC), rng, f"{100 + i:06d}") for i in range(4)]


@pytest.fixture(scope="session")
def kitti_tree(tmp_path_factory, source_frames, wall_frames):
    """A small KITTI-layout tree: source scenes plus wall scenes, with ImageSets/train.txt."""
    root = tmp_path_factory.mktemp("kitti")
    ids = []
    for bundle in list(source_frames) + list(wall_frames):
        write_kitti_frame(root, bundle)
        ids.append(bundle.frame_id)
    (root / "ImageSets").mkdir()
    (root / "ImageSets" / "train.txt").write_text("\n".join(ids) + "\n")
    return root


# criterion lines recorded by test_acceptance.py, echoed after the run
ACCEPTANCE_LINES = []


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> bool:
    line = f"[{number:2d}] {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
