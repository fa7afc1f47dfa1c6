#!/usr/bin/env python3
"""Regenerate the extractor test sample and the shared colorization golden.

The golden PNG is produced by the CONSUMER pipeline's colorizer (zeroseg
must be installed); the extractor's own implementation is tested against
it bit for bit, which is the parity contract between the two packages.

Run from the extractor directory: python tools/make_test_data.py
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
from PIL import Image

DATA = Path(__file__).resolve().parent.parent / "tests" / "data"

H, W = 224, 280
OBJ1 = (40, 50, 100, 120, 800)    # y0, x0, y1, x1, depth_mm
OBJ2 = (110, 150, 180, 240, 950)


def build_sample():
    rows = np.linspace(1200, 2000, H).astype(np.uint16)
    depth = np.tile(rows[:, None], (1, W))
    labels = np.zeros((H, W), dtype=np.uint8)
    for value, (y0, x0, y1, x1, d) in enumerate((OBJ1, OBJ2), start=1):
        depth[y0:y1, x0:x1] = d
        labels[y0:y1, x0:x1] = value
    depth[215:224, 0:12] = 0  # invalid sensor region

    yy, xx = np.mgrid[0:H, 0:W]
    rgb = np.stack([
        90 + 40 * np.sin(xx / 17.0) + 20 * np.sin(yy / 23.0),
        80 + 30 * np.cos(xx / 13.0) + 25 * np.sin(yy / 19.0),
        100 + 35 * np.sin((xx + yy) / 29.0),
    ], axis=-1)
    rgb = np.clip(rgb, 0, 255).astype(np.uint8)
    y0, x0, y1, x1, _ = OBJ1
    rgb[y0:y1, x0:x1] = (np.array([200, 80, 60])
                         + (yy[y0:y1, x0:x1, None] % 7) * 3).clip(0, 255)
    y0, x0, y1, x1, _ = OBJ2
    rgb[y0:y1, x0:x1] = (np.array([60, 90, 200])
                         + (xx[y0:y1, x0:x1, None] % 5) * 4).clip(0, 255)
    return rgb, depth, labels


def main() -> int:
    try:
        from zeroseg.depthcolor import colorize_depth as consumer_colorize
    except ImportError:
        print("zeroseg must be installed to produce the parity golden",
              file=sys.stderr)
        return 1

    DATA.mkdir(parents=True, exist_ok=True)
    rgb, depth, labels = build_sample()
    Image.fromarray(rgb, mode="RGB").save(DATA / "sample_rgb.png")
    Image.fromarray(depth).save(DATA / "sample_depth.png")
    Image.fromarray(labels, mode="L").save(DATA / "sample_label.png")
    golden = consumer_colorize(depth)
    Image.fromarray(golden, mode="RGB").save(DATA / "golden_colorized.png")
    print("sample + golden written under", DATA)
    return 0


if __name__ == "__main__":
    sys.exit(main())
