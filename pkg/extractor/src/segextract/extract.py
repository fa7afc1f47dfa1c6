"""Scene extraction: run both models once and persist the fixture bundle.

Files are written individually via temp + rename, with proposals.json
second to last and checksums.json last: consumers treat a scene without
proposals.json as absent, so an interrupted extraction never yields a
bundle that half-works.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .colorize import colorize_depth
from .fixture import (
    normalize_params,
    read_depth,
    read_rgb,
    write_checksums,
    write_image_depth,
    write_image_rgb,
    write_proposals,
    write_stack,
)
from .models import ExtractorError


def extract_scene(rgb_path: str | Path, depth_path: str | Path, out_dir: str | Path,
                  params: dict | None, segmenter, descriptor) -> Path:
    """Extract one scene into ``out_dir`` and return that path."""
    rgb = read_rgb(Path(rgb_path))
    depth = read_depth(Path(depth_path))
    if rgb.shape[:2] != depth.shape:
        raise ExtractorError(f"rgb {rgb.shape[:2]} and depth {depth.shape} "
                             f"dimensions differ")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = normalize_params(params)

    colorized = colorize_depth(depth)
    proposals = segmenter.generate(colorized, params)
    attn, feats, grid = descriptor.extract(rgb)
    _check_stacks(attn, feats, grid)

    write_image_rgb(out_dir / "rgb.png", rgb)
    write_image_depth(out_dir / "depth.png", depth)
    write_stack(out_dir / "attn.bin", attn, grid)
    write_stack(out_dir / "feat.bin", feats, grid,
                extra={"source": getattr(descriptor, "features", "key")})
    masks = [m for m, _ in proposals]
    scores = [min(1.0, max(0.0, s)) for _, s in proposals]
    for mask in masks:
        if mask.shape != depth.shape:
            raise ExtractorError(f"generated mask shape {mask.shape} does not "
                                 f"match image {depth.shape}")
    write_proposals(out_dir / "proposals.json", masks, scores, params,
                    depth.shape[0], depth.shape[1])
    write_checksums(out_dir)
    return out_dir


def bridge_extract(scene_dir: str | Path, segmenter, descriptor) -> Path:
    """Extraction entry point for the consumer's bridge backend.

    The scene directory must already contain rgb.png and depth.png; the
    bridge drops the requested generator parameters in params.json.
    """
    scene_dir = Path(scene_dir)
    for name in ("rgb.png", "depth.png"):
        if not (scene_dir / name).is_file():
            raise ExtractorError(f"{scene_dir} is missing {name}")
    params_path = scene_dir / "params.json"
    params = json.loads(params_path.read_text()) if params_path.is_file() else None
    return extract_scene(scene_dir / "rgb.png", scene_dir / "depth.png",
                         scene_dir, params, segmenter, descriptor)


def _check_stacks(attn: np.ndarray, feats: np.ndarray, grid) -> None:
    if attn.ndim != 2 or feats.ndim != 3:
        raise ExtractorError(f"bad stack shapes: attn {attn.shape}, feats {feats.shape}")
    if np.any(attn < 0) or not np.all(np.isfinite(attn)):
        raise ExtractorError("attention values must be finite and non-negative")
    if not np.all(np.isfinite(feats)):
        raise ExtractorError("feature values must be finite")
    if attn.shape[0] != feats.shape[0] or attn.shape[1] != feats.shape[1]:
        raise ExtractorError(f"attention {attn.shape} and features {feats.shape} "
                             f"disagree on heads/patches")
    if grid[0] * grid[1] != attn.shape[1]:
        raise ExtractorError(f"grid {grid} does not cover {attn.shape[1]} patches")
