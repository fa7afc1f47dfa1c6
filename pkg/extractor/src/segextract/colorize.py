"""Viridis depth colorization, bit-compatible with the consumer pipeline.

The segmentation pipeline generates its stage-1 proposals from colorized
depth, so the extractor must colorize with the exact same rule or the
recorded proposals will not correspond to what the pipeline expects.  The
rule (verified by a shared golden-image test):

* min-max normalization over valid (nonzero) pixels;
* degenerate range (max == min) maps valid pixels to table entry 0;
* table index = round-half-up of normalized * 255;
* invalid (zero) pixels map to table entry 0.
"""

from __future__ import annotations

import numpy as np

from ._viridis import VIRIDIS_TABLE

VIRIDIS_LUT = np.array(VIRIDIS_TABLE, dtype=np.uint8)


class NoValidDepthError(ValueError):
    pass


def colorize_depth(depth: np.ndarray) -> np.ndarray:
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
        index = np.floor((values - lo) / (hi - lo) * 255.0 + 0.5).astype(np.intp)
    index[~valid] = 0
    return VIRIDIS_LUT[index]
