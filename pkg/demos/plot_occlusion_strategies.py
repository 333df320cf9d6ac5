"""
Resolving occlusion after insertion
===================================

Pasted objects and the scene compete for range-image pixels. Naive keeps the
nearest point per pixel, Culling drops objects that lose too much, and
Drilling clears background points that share a pixel with an object.
"""

# %%
import math

import numpy as np

from caaug.geometry import GROUND, OBSTACLE, LidarSpec, PointCloud
from caaug.occlusion import resolve

spec = LidarSpec()


def beam(u, v, r):
    az = math.pi * (1.0 - 2.0 * (u + 0.5) / spec.width)
    el = spec.fov_down + (1.0 - (v + 0.5) / spec.height) * spec.fov
    return [r * math.cos(el) * math.cos(az), r * math.cos(el) * math.sin(az), r * math.sin(el)]


# %%
# A toy merge
# -----------
# Object 0 has 20 points of which 16 sit behind a wall. Object 1 stands in
# front of a distant building.
wall = [beam(400 + i, 20, 4.0) for i in range(16)]
building = [beam(600 + i, 20, 30.0) for i in range(10)]
scene = PointCloud(np.array(wall + building), np.zeros(26), np.array([OBSTACLE] * 16 + [GROUND] * 10))
obj0 = [beam(400 + i, 20, 10.0) for i in range(20)]
obj1 = [beam(600 + i, 20, 12.0) for i in range(10)]
inserted = PointCloud(np.array(obj0 + obj1), np.zeros(30), np.array([0] * 20 + [1] * 10))

# %%
# Compare the strategies
# ----------------------
for strategy in ("none", "naive", "culling", "drilling"):
    out, report = resolve(scene, inserted, strategy, spec)
    kept = {i: int((out.tags == i).sum()) for i in (0, 1)}
    background = int((out.tags < 0).sum())
    print(f"{strategy:9s} object points {kept}  background {background}  dropped {report.dropped}")
