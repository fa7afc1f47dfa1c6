"""Viridis colorization of raw depth images.

Depth frames arrive as single-channel images in millimeters where zero
marks a missing/invalid measurement.  Valid pixels are min-max normalized
and mapped through a 256-entry viridis lookup table, which emphasizes the
scene geometry for a downstream segmentation backend that expects RGB
input.

Conventions (fixed so results are reproducible):

* normalization is min-max over the valid (nonzero) pixels only;
* a degenerate range (max == min) maps every valid pixel to table entry 0;
* table index is round-half-up of ``normalized * 255``;
* invalid pixels map to table entry 0, keeping the output in-gamut.
"""

from __future__ import annotations

import numpy as np

from ._viridis import VIRIDIS_TABLE

VIRIDIS_LUT = np.array(VIRIDIS_TABLE, dtype=np.uint8)


class NoValidDepthError(ValueError):
    """Raised when a depth image contains no valid (nonzero) pixels."""


def colorize_depth(depth: np.ndarray) -> np.ndarray:
    """Map a depth image (H, W) to a viridis-colorized RGB image (H, W, 3).

    Raises NoValidDepthError if every pixel is zero, which signals an
    unusable sensor frame.
    """
    arr = np.asarray(depth)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"depth must be a non-empty 2-D array, got shape {arr.shape}")
    if np.any(arr < 0):
        raise ValueError("depth values must be non-negative")

    valid = arr > 0
    if not valid.any():
        raise NoValidDepthError("no valid depth")

    values = arr.astype(np.float64)
    lo = values[valid].min()
    hi = values[valid].max()
    if hi == lo:
        index = np.zeros(arr.shape, dtype=np.intp)
    else:
        normalized = (values - lo) / (hi - lo)
        index = np.floor(normalized * 255.0 + 0.5).astype(np.intp)
    index[~valid] = 0
    return VIRIDIS_LUT[index]
