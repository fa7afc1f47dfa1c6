"""PNG image I/O: 8-bit RGB color and 16-bit grayscale depth."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def read_rgb(path: str | Path) -> np.ndarray:
    """Read an image file as (H, W, 3) uint8 RGB."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_rgb(path: str | Path, image: np.ndarray) -> None:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8, got {arr.shape} {arr.dtype}")
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def read_depth(path: str | Path) -> np.ndarray:
    """Read a 16-bit (or 8-bit) grayscale depth image as (H, W) uint16."""
    with Image.open(path) as im:
        if im.mode not in ("I;16", "I", "L"):
            raise ValueError(f"depth image must be single-channel, got mode {im.mode!r}")
        arr = np.asarray(im)
    if np.any(arr < 0) or np.any(arr > np.iinfo(np.uint16).max):
        raise ValueError("depth values out of uint16 range")
    return arr.astype(np.uint16)


def write_depth(path: str | Path, depth: np.ndarray) -> None:
    arr = np.asarray(depth)
    if arr.ndim != 2:
        raise ValueError(f"expected (H, W) depth, got shape {arr.shape}")
    Image.fromarray(arr.astype(np.uint16)).save(path, format="PNG")


def read_label(path: str | Path) -> np.ndarray:
    """Read an instance-label image (palette, 8-bit, or 16-bit gray) as int32."""
    with Image.open(path) as im:
        if im.mode not in ("P", "L", "I;16", "I"):
            raise ValueError(f"label image must be single-channel, got mode {im.mode!r}")
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise ValueError(f"label image must be 2-D, got shape {arr.shape}")
    return arr.astype(np.int32)


def write_label(path: str | Path, labels: np.ndarray) -> None:
    arr = np.asarray(labels)
    if arr.ndim != 2 or np.any(arr < 0):
        raise ValueError("labels must be a 2-D array of non-negative ids")
    if arr.max(initial=0) > 255:
        Image.fromarray(arr.astype(np.uint16)).save(path, format="PNG")
    else:
        Image.fromarray(arr.astype(np.uint8), mode="L").save(path, format="PNG")
