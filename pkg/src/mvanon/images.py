"""PNG reading and writing for color frames and 16-bit depth maps."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .cloud import DepthMap


def load_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_rgb(image: np.ndarray, path) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError("expected a (H, W, 3) uint8 image")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image, mode="RGB").save(path)


def load_depth(path) -> DepthMap:
    """Read a 16-bit single-channel PNG; values are mm, 0 means no data."""
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise ValueError(f"{path}: depth PNG must be single-channel")
    return DepthMap(arr.astype(np.float64))


def save_depth(depth, path) -> None:
    """Write depth (mm) as a 16-bit PNG, rounding and clipping to range."""
    data = depth.data if isinstance(depth, DepthMap) else np.asarray(depth)
    arr = np.clip(np.rint(data), 0, np.iinfo(np.uint16).max).astype(np.uint16)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="I;16").save(path)
