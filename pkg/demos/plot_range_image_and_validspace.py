"""
Range images and the Validspace
===============================

A synthetic scene is ray cast into a 64 x 2048 range image, split into
ground and obstacle points with height pillars, and reduced to one nearest
obstacle range per azimuth column.
"""

# %%
# Ray cast a wall scene
# ---------------------
# The generator casts one beam per pixel, so every point sits on a beam center.
import tempfile
from pathlib import Path

import numpy as np

from caaug.geometry import LidarSpec, project_points, spherical_project
from caaug.partition import compute_validspace, partition_scene
from caaug.render import render_rgb, write_ppm
from caaug.synthetic import generate_synthetic_scene, random_wall_scene

spec = LidarSpec()
rng = np.random.default_rng(0)
bundle = generate_synthetic_scene(random_wall_scene(rng, spec), rng)
cloud = bundle.cloud
print(f"{len(cloud)} points, {len(bundle.boxes)} parked boxes")

# %%
# Spherical projection
# --------------------
# A point straight ahead lands in the middle column; behind the sensor it
# lands on the seam at column 0.
print(spherical_project(10.0, 0.0, 0.0, spec), spherical_project(-10.0, 0.0, 0.0, spec))
proj = project_points(cloud.xyz, spec)
print(f"{proj.in_fov.mean():.1%} of the points fall inside the vertical field of view")

# %%
# Pillar partition
# ----------------
# A 0.25 m pillar is an obstacle when its height span exceeds 0.4 m.
partition = partition_scene(cloud)
print(f"{len(partition.obstacle)} obstacle points, {len(partition.ground)} ground points")

# %%
# Validspace
# ----------
# Columns without any obstacle are open to infinity.
V = compute_validspace(cloud, partition, spec)
finite = np.isfinite(V)
print(f"{finite.sum()} blocked columns, nearest blocker {V[finite].min():.2f} m")
front = V[spec.width // 2 - 5: spec.width // 2 + 5]
print("forward columns:", np.round(front, 2))

# %%
# Save the range image
# --------------------
out = Path(tempfile.mkdtemp()) / "scene.ppm"
write_ppm(out, render_rgb(cloud, spec))
print("wrote", out)
