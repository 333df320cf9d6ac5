"""
Augmenting a KITTI-layout dataset
=================================

End to end through the command line: write a small synthetic KITTI tree,
build the object database, augment, check the invariants and render one
frame.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from caaug.cli import main
from caaug.kitti import write_kitti_frame
from caaug.synthetic import generate_synthetic_scene, random_source_scene, random_wall_scene

root = Path(tempfile.mkdtemp())
kitti = root / "kitti"
rng = np.random.default_rng(3)
for i in range(4):
    write_kitti_frame(kitti, generate_synthetic_scene(random_source_scene(rng), rng, f"{i:06d}"))
for i in range(4, 6):
    write_kitti_frame(kitti, generate_synthetic_scene(random_wall_scene(rng), rng, f"{i:06d}"))

# %%
# Build the database from the open scenes
# ---------------------------------------
main(["build-db", str(kitti), str(root / "gt.db"), "--frames", "000000,000001,000002,000003"])

# %%
# Augment the wall scenes
# -----------------------
out = root / "out"
main(["augment", str(kitti), str(root / "gt.db"), str(out), "--frames", "000004,000005", "--seed", "7"])
main(["stats", str(out)])

# %%
# Validate and render
# -------------------
main(["validate", str(out)])
main(["render", str(out / "velodyne" / "000004.bin"), str(root / "000004.ppm")])
print("outputs under", root)
