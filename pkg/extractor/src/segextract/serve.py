"""Prompt server: answer prompt-request files with prompted predictions.

The consumer's bridge backend drops ``prompt_requests/<key>.json`` files
({"kind": "points", "points": [[x, y], ...]} or {"kind": "box", "box":
[x0, y0, x1, y1]}) and waits for ``prompted/<key>.json``.  Answers are
keyed by the canonical hash recomputed from the request content.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

from .fixture import read_rgb, write_prompted
from .models import ExtractorError


def answer_pending(scene_dir: str | Path, segmenter) -> int:
    """Answer every pending request once; returns the number answered."""
    scene_dir = Path(scene_dir)
    req_dir = scene_dir / "prompt_requests"
    if not req_dir.is_dir():
        return 0
    rgb_path = scene_dir / "rgb.png"
    if not rgb_path.is_file():
        raise ExtractorError(f"{scene_dir} has prompt requests but no rgb.png")
    image = read_rgb(rgb_path)
    answered = 0
    for request_path in sorted(req_dir.glob("*.json")):
        request = json.loads(request_path.read_text())
        if request.get("kind") == "points":
            mask, score = segmenter.predict_points(
                image, [tuple(p) for p in request["points"]])
        elif request.get("kind") == "box":
            mask, score = segmenter.predict_box(image, request["box"])
        else:
            raise ExtractorError(f"{request_path.name}: unknown prompt kind "
                                 f"{request.get('kind')!r}")
        write_prompted(scene_dir, request, mask, score)
        request_path.unlink()
        answered += 1
    return answered


def serve_prompts(scene_dir: str | Path, segmenter, watch: bool = False,
                  poll_interval: float = 0.2, max_idle: float | None = None) -> int:
    """Answer requests; with ``watch`` keep polling until idle for
    ``max_idle`` seconds (forever when None)."""
    total = answer_pending(scene_dir, segmenter)
    if not watch:
        return total
    idle_since = time.monotonic()
    while True:
        time.sleep(poll_interval)
        n = answer_pending(scene_dir, segmenter)
        if n:
            total += n
            idle_since = time.monotonic()
        elif max_idle is not None and time.monotonic() - idle_since >= max_idle:
            return total
