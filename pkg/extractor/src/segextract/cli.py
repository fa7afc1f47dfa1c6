"""Extractor command line.

Subcommands::

    extract         one scene from explicit --rgb/--depth into --out
    bridge-extract  one scene directory prepared by the bridge backend
    serve           answer prompt requests in a scene directory

Model flags are shared: --segmenter-checkpoint, --descriptor-checkpoint,
--device (auto|cpu|cuda), --features (key|token).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .extract import bridge_extract, extract_scene
from .models import DEFAULT_DESCRIPTOR, DEFAULT_SEGMENTER, ExtractorError
from .serve import serve_prompts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segextract",
                                     description="Record model outputs as fixture bundles")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_model_args(p, descriptor=True):
        p.add_argument("--segmenter-checkpoint", default=DEFAULT_SEGMENTER)
        p.add_argument("--device", default="auto", help="auto, cpu, or cuda")
        if descriptor:
            p.add_argument("--descriptor-checkpoint", default=DEFAULT_DESCRIPTOR)
            p.add_argument("--features", choices=("key", "token"), default="key",
                           help="record attention-key projections or output tokens")

    p_ex = sub.add_parser("extract", help="extract one scene")
    p_ex.add_argument("--rgb", required=True)
    p_ex.add_argument("--depth", required=True)
    p_ex.add_argument("--out", required=True)
    p_ex.add_argument("--params", default=None,
                      help="JSON file with generator parameters")
    add_model_args(p_ex)
    p_ex.set_defaults(func=cmd_extract)

    p_br = sub.add_parser("bridge-extract",
                          help="extract a scene directory holding rgb.png/depth.png")
    p_br.add_argument("scene_dir")
    add_model_args(p_br)
    p_br.set_defaults(func=cmd_bridge_extract)

    p_sv = sub.add_parser("serve", help="answer prompt requests")
    p_sv.add_argument("scene_dir")
    p_sv.add_argument("--watch", action="store_true",
                      help="keep polling instead of answering once")
    p_sv.add_argument("--poll-interval", type=float, default=0.2)
    p_sv.add_argument("--max-idle", type=float, default=None,
                      help="with --watch, exit after this many idle seconds")
    add_model_args(p_sv, descriptor=False)
    p_sv.set_defaults(func=cmd_serve)

    return parser


def _load_models(args, descriptor=True):
    from .models import SamSegmenter, VitDescriptor

    segmenter = SamSegmenter(args.segmenter_checkpoint, device=args.device)
    if not descriptor:
        return segmenter, None
    return segmenter, VitDescriptor(args.descriptor_checkpoint, device=args.device,
                                    features=args.features)


def cmd_extract(args) -> int:
    params = json.loads(Path(args.params).read_text()) if args.params else None
    segmenter, descriptor = _load_models(args)
    out = extract_scene(args.rgb, args.depth, args.out, params, segmenter, descriptor)
    print(f"bundle written to {out}")
    return 0


def cmd_bridge_extract(args) -> int:
    segmenter, descriptor = _load_models(args)
    out = bridge_extract(args.scene_dir, segmenter, descriptor)
    print(f"bundle written to {out}")
    return 0


def cmd_serve(args) -> int:
    segmenter, _ = _load_models(args, descriptor=False)
    n = serve_prompts(args.scene_dir, segmenter, watch=args.watch,
                      poll_interval=args.poll_interval, max_idle=args.max_idle)
    print(f"answered {n} prompt request(s)")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ExtractorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
