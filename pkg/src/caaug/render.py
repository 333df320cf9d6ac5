"""Range-image rendering to binary PPM for inspection."""
from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import LidarSpec, PointCloud
from .occlusion import render_range_image

INSERTED_RGB = (0, 255, 0)


def range_to_rgb(ranges: np.ndarray, max_range: float = 60.0) -> np.ndarray:
    """Near = warm, far = cold; empty pixels black."""
    t = np.clip(np.nan_to_num(ranges / max_range, posinf=1.0), 0.0, 1.0)
    rgb = np.stack([255 * (1 - t), 255 * (1 - np.abs(2 * t - 1)), 255 * t], axis=-1)
    rgb[~np.isfinite(ranges)] = 0
    return rgb.astype(np.uint8)


def render_rgb(cloud: PointCloud, spec: LidarSpec, tags: Optional[np.ndarray] = None,
               max_range: float = 60.0) -> np.ndarray:
    img = render_range_image(cloud, spec)
    rgb = range_to_rgb(img.range, max_range)
    if tags is not None:
        occupied = img.index >= 0
        is_obj = np.zeros_like(occupied)
        is_obj[occupied] = np.asarray(tags)[img.index[occupied]] >= 0
        rgb[is_obj] = INSERTED_RGB
    return rgb


def write_ppm(path, rgb: np.ndarray) -> Path:
    path = Path(path)
    h, w, _ = rgb.shape
    path.write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(rgb, np.uint8).tobytes())
    return path


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, size, maxval, rest = data.split(b"\n", 3)
    w, h = size.split()
    if magic != b"P6" or int(maxval) != 255:
        raise ValueError("only binary 8-bit PPM is supported")
    return np.frombuffer(rest, np.uint8, int(w) * int(h) * 3).reshape(int(h), int(w), 3)
