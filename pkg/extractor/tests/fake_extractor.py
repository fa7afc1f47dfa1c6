#!/usr/bin/env python3
"""Fake-model extractor driver for the bridge-backend tests.

Usage: fake_extractor.py {extract|serve} SCENE_DIR
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from fakes import FakeDescriptor, FakeSegmenter  # noqa: E402

from segextract.extract import bridge_extract  # noqa: E402
from segextract.fixture import read_depth  # noqa: E402
from segextract.serve import serve_prompts  # noqa: E402


def main() -> int:
    if len(sys.argv) != 3 or sys.argv[1] not in ("extract", "serve"):
        print(__doc__, file=sys.stderr)
        return 2
    command, scene_dir = sys.argv[1], Path(sys.argv[2])
    depth = read_depth(scene_dir / "depth.png")
    segmenter = FakeSegmenter(depth)
    if command == "extract":
        bridge_extract(scene_dir, segmenter, FakeDescriptor(depth))
    else:
        serve_prompts(scene_dir, segmenter)
    return 0


if __name__ == "__main__":
    sys.exit(main())
