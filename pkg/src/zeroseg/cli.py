"""Command-line front end.

Subcommands::

    run               segment every dataset scene and persist the results
    eval              score persisted results against ground truth
    sweep-tau         re-run + evaluate across background thresholds
    ablate-prompts    compare prompt strategies (cluster/random/boxes)
    ablate-weighting  compare entropy weighting on vs off
    fixture-validate  integrity-check a fixture directory
    viz               render a mask overlay (and similarity map) image

Exit codes: 0 success, 1 scene or evaluation failures, 2 bad invocation.
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import backends as bk
from . import datasets, metrics, pngio
from .attnfilter import AttentionStack, FeatureStack, SimilarityMap, upsample_nearest
from .depthcolor import VIRIDIS_LUT
from .maskset import ProposalSet, mask_to_rle, rle_to_mask
from .metrics import boundary_pixels
from .pipeline import ConfigError, PipelineConfig, load_config, run_scene

# fixed overlay palette, cycled over instances
PALETTE = [
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
    (128, 128, 0), (255, 215, 180), (0, 0, 128), (128, 128, 128),
]


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except bk.FixtureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zeroseg",
                                     description="Zero-shot object instance segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_dataset_args(p):
        p.add_argument("dataset", help="dataset root directory")
        p.add_argument("--layout", choices=datasets.LAYOUTS, default="flat")
        p.add_argument("--background-labels", default=None,
                       help="comma-separated label ids treated as background "
                            "(default depends on layout)")

    def add_run_args(p):
        p.add_argument("--backend", required=True,
                       help="replay:<fixture_root> or bridge:<fixture_root>")
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--out", required=True, help="results output directory")
        p.add_argument("--jobs", type=int, default=1, help="scene-level parallelism")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--extract-cmd", default=None,
                       help="bridge only: extractor command line")
        p.add_argument("--serve-cmd", default=None,
                       help="bridge only: prompt-server command line")
        p.add_argument("--save-stages", action="store_true",
                       help="persist per-stage intermediates and the similarity map")

    p_run = sub.add_parser("run", help="segment every scene of a dataset")
    add_dataset_args(p_run)
    add_run_args(p_run)
    p_run.add_argument("--keep-going", action="store_true",
                       help="process remaining scenes after a failure (exit 0)")
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("eval", help="evaluate persisted results")
    add_dataset_args(p_eval)
    p_eval.add_argument("results", help="results directory produced by run")
    p_eval.add_argument("--tol", type=int, default=metrics.DEFAULT_BOUNDARY_TOL,
                        help="boundary tolerance in pixels")
    p_eval.add_argument("--report", default=None,
                        help="report JSON path (default <results>/report.json)")
    p_eval.add_argument("--allow-missing", action="store_true",
                        help="treat scenes without results as empty predictions")
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep-tau", help="evaluate across background thresholds")
    add_dataset_args(p_sweep)
    add_run_args(p_sweep)
    p_sweep.add_argument("--taus", required=True,
                         help="comma-separated list of thresholds, e.g. 0.0,0.25,0.5")
    p_sweep.add_argument("--tol", type=int, default=metrics.DEFAULT_BOUNDARY_TOL)
    p_sweep.set_defaults(func=cmd_sweep_tau)

    p_ap = sub.add_parser("ablate-prompts", help="compare prompt strategies")
    add_dataset_args(p_ap)
    add_run_args(p_ap)
    p_ap.add_argument("--mode", choices=("boxes", "random", "cluster"), required=True)
    p_ap.add_argument("--tol", type=int, default=metrics.DEFAULT_BOUNDARY_TOL)
    p_ap.set_defaults(func=cmd_ablate_prompts)

    p_aw = sub.add_parser("ablate-weighting", help="entropy weighting on vs off")
    add_dataset_args(p_aw)
    add_run_args(p_aw)
    p_aw.add_argument("--mode", choices=("on", "off"), required=True)
    p_aw.add_argument("--tol", type=int, default=metrics.DEFAULT_BOUNDARY_TOL)
    p_aw.set_defaults(func=cmd_ablate_weighting)

    p_fv = sub.add_parser("fixture-validate", help="integrity-check fixtures")
    p_fv.add_argument("fixtures", help="fixture root directory")
    p_fv.set_defaults(func=cmd_fixture_validate)

    p_viz = sub.add_parser("viz", help="render overlay images")
    p_viz.add_argument("result", help="path to a scene result.json")
    p_viz.add_argument("--rgb", required=True, help="scene RGB image")
    p_viz.add_argument("--out", required=True, help="overlay PNG path")
    p_viz.add_argument("--sim", default=None,
                       help="sim.bin from --save-stages; writes <out>.sim.png")
    p_viz.set_defaults(func=cmd_viz)

    return parser


# ---------------------------------------------------------------------------
# shared helpers

def _background_labels(args) -> tuple[int, ...]:
    if args.background_labels is None:
        return datasets.DEFAULT_BACKGROUND_LABELS[args.layout]
    return tuple(int(v) for v in args.background_labels.split(",") if v.strip() != "")


def _parse_cmd(text: str | None) -> list[str] | None:
    return shlex.split(text) if text else None


def _parse_backend_spec(spec: str) -> tuple[str, str]:
    kind, sep, root = spec.partition(":")
    if not sep or not root or kind not in ("replay", "bridge"):
        raise ValueError(f"backend spec must be replay:<dir> or bridge:<dir>, got {spec!r}")
    return kind, root


def _scene_backend(spec: str, scene_id: str, extract_cmd, serve_cmd):
    kind, root = _parse_backend_spec(spec)
    if kind == "replay":
        return bk.ReplayBackend(root).scene(scene_id)
    return bk.BridgeBackend(Path(root) / scene_id, scene_id,
                            extract_cmd=extract_cmd, serve_cmd=serve_cmd)


def _result_dir(out_root: Path, scene_id: str) -> Path:
    return out_root / scene_id


def _process_scene(task: dict) -> tuple[str, str | None]:
    """Worker: segment one scene and persist its result. Returns (id, error)."""
    ref: datasets.SceneRef = task["ref"]
    try:
        scene = datasets.load_scene(ref, task["background_labels"])
        kind, root = _parse_backend_spec(task["backend_spec"])
        if kind == "bridge":
            # the extractor process reads the scene images from its directory
            scene_dir = Path(root) / scene.scene_id
            scene_dir.mkdir(parents=True, exist_ok=True)
            if not (scene_dir / "rgb.png").is_file():
                pngio.write_rgb(scene_dir / "rgb.png", scene.rgb)
            if not (scene_dir / "depth.png").is_file():
                pngio.write_depth(scene_dir / "depth.png", scene.depth)
        backend = _scene_backend(task["backend_spec"], scene.scene_id,
                                 task["extract_cmd"], task["serve_cmd"])
        result = run_scene(scene.rgb, scene.depth, task["config"], backend,
                           scene_id=scene.scene_id)
        _persist_result(Path(task["out_root"]), result, task["config"],
                        task["save_stages"])
        return scene.scene_id, None
    except Exception as exc:  # per-scene failures are data, not crashes
        return ref.scene_id, f"{type(exc).__name__}: {exc}"


def _persist_result(out_root: Path, result, cfg: PipelineConfig,
                    save_stages: bool) -> None:
    scene_dir = _result_dir(out_root, result.scene_id)
    scene_dir.mkdir(parents=True, exist_ok=True)
    h, w = result.image_shape
    doc = {
        "scene": result.scene_id,
        "height": int(h),
        "width": int(w),
        "config": cfg.to_flat_dict(),
        "masks": [mask_to_rle(m) for m in result.final.masks],
        "scores": list(result.final.scores),
        "prompts": [[[p.x, p.y] for p in group] for group in result.prompts],
        "background_index": int(result.background_index),
        "background_scores": [float(s) for s in result.background_scores],
        "stage_counts": {
            "raw": len(result.raw_proposals),
            "independent": len(result.independent),
            "size_filtered": len(result.size_filtered),
            "objects": len(result.objects),
            "final": len(result.final),
        },
    }
    bk.atomic_write_text(scene_dir / "result.json",
                         json.dumps(doc, sort_keys=True, indent=2) + "\n")
    bk.atomic_write_text(scene_dir / "timings.json",
                         json.dumps(result.timings, sort_keys=True, indent=2) + "\n")
    if save_stages:
        stages_dir = scene_dir / "stages"
        stages_dir.mkdir(exist_ok=True)
        for name, pset in (("raw", result.raw_proposals),
                           ("independent", result.independent),
                           ("size_filtered", result.size_filtered),
                           ("objects", result.objects),
                           ("refined", result.refined)):
            doc = {"masks": [mask_to_rle(m) for m in pset.masks],
                   "scores": list(pset.scores), "source": pset.source}
            bk.atomic_write_text(stages_dir / f"{name}.json",
                                 json.dumps(doc, sort_keys=True, indent=2) + "\n")
        bk.write_stack(stages_dir / "sim.bin", result.similarity.values,
                       result.similarity.grid)
        bk.atomic_write_text(stages_dir / "weights.json",
                             json.dumps([float(v) for v in result.head_weights]) + "\n")


def _run_dataset(args, cfg: PipelineConfig, out_root: Path,
                 keep_going: bool) -> tuple[list[str], list[tuple[str, str]]]:
    """Run the pipeline over every dataset scene; returns (ok_ids, failures)."""
    _parse_backend_spec(args.backend)  # reject malformed specs up front
    refs = datasets.scan_dataset(args.dataset, args.layout)
    background_labels = _background_labels(args)
    tasks = [{
        "ref": ref,
        "background_labels": background_labels,
        "backend_spec": args.backend,
        "extract_cmd": _parse_cmd(args.extract_cmd),
        "serve_cmd": _parse_cmd(args.serve_cmd),
        "config": cfg,
        "out_root": str(out_root),
        "save_stages": args.save_stages,
    } for ref in refs]

    ok: list[str] = []
    failures: list[tuple[str, str]] = []
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_process_scene, tasks))
    else:
        outcomes = []
        for task in tasks:
            outcome = _process_scene(task)
            outcomes.append(outcome)
            if outcome[1] is not None and not keep_going:
                break
    for scene_id, error in outcomes:
        if error is None:
            ok.append(scene_id)
        else:
            failures.append((scene_id, error))
            print(f"FAIL {scene_id}: {error}", file=sys.stderr)
    return ok, failures


def _load_result_masks(results_root: Path, scene_id: str) -> ProposalSet | None:
    path = _result_dir(results_root, scene_id) / "result.json"
    if not path.is_file():
        return None
    doc = json.loads(path.read_text())
    masks = [rle_to_mask(r) for r in doc["masks"]]
    return ProposalSet(masks, doc["scores"], source="prediction")


def _evaluate_results(args, results_root: Path, tol: int,
                      allow_missing: bool) -> tuple[metrics.EvalReport, list[str]]:
    background_labels = _background_labels(args)
    missing: list[str] = []
    scene_evals = []
    errors: list[datasets.SceneLoadError] = []
    for scene in datasets.load_dataset(args.dataset, args.layout,
                                       background_labels, errors=errors):
        preds = _load_result_masks(results_root, scene.scene_id)
        if preds is None:
            missing.append(scene.scene_id)
            if not allow_missing:
                continue
            preds = ProposalSet([], source="prediction")
        scene_evals.append(metrics.evaluate_scene(scene.scene_id, preds, scene.gt, tol=tol))
    for err in errors:
        print(f"WARN dataset scene skipped: {err}", file=sys.stderr)
    return metrics.aggregate(scene_evals), missing


# ---------------------------------------------------------------------------
# commands

def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    ok, failures = _run_dataset(args, cfg, out_root, args.keep_going)
    print(f"processed {len(ok)} scene(s), {len(failures)} failure(s)")
    if failures and not args.keep_going:
        return 1
    return 0


def cmd_eval(args) -> int:
    results_root = Path(args.results)
    if not results_root.is_dir():
        raise FileNotFoundError(f"results directory does not exist: {results_root}")
    report, missing = _evaluate_results(args, results_root, args.tol, args.allow_missing)
    if missing and not args.allow_missing:
        for scene_id in missing:
            print(f"missing result for scene {scene_id}", file=sys.stderr)
        return 1
    print(metrics.format_report(report, label=Path(args.dataset).name))
    report_path = Path(args.report) if args.report else results_root / "report.json"
    doc = report.to_dict()
    doc["tolerance_px"] = args.tol
    bk.atomic_write_text(report_path, json.dumps(doc, sort_keys=True, indent=2) + "\n")
    print(f"report written to {report_path}")
    return 0


def cmd_sweep_tau(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    taus = [float(t) for t in args.taus.split(",") if t.strip() != ""]
    if not taus:
        raise ValueError("at least one tau value is required")
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)

    rows = []
    any_failures = False
    for tau in taus:
        tau_cfg = replace(cfg, tau=tau)
        tau_dir = out_root / f"tau_{tau:.4f}"
        tau_dir.mkdir(parents=True, exist_ok=True)
        ok, failures = _run_dataset(args, tau_cfg, tau_dir, keep_going=True)
        any_failures = any_failures or bool(failures)
        report, missing = _evaluate_results(args, tau_dir, args.tol, allow_missing=True)
        doc = report.to_dict()
        doc["tau"] = tau
        bk.atomic_write_text(tau_dir / "report.json",
                             json.dumps(doc, sort_keys=True, indent=2) + "\n")
        rows.append((tau, report))

    header = ["tau", "overlap_p", "overlap_r", "overlap_f",
              "boundary_p", "boundary_r", "boundary_f", "f_at_75"]
    lines = ["\t".join(header)]
    for tau, rep in rows:
        lines.append("\t".join([f"{tau:.4f}",
                                f"{rep.overlap_p:.6f}", f"{rep.overlap_r:.6f}",
                                f"{rep.overlap_f:.6f}", f"{rep.boundary_p:.6f}",
                                f"{rep.boundary_r:.6f}", f"{rep.boundary_f:.6f}",
                                f"{rep.f_at_75:.4f}"]))
    table = "\n".join(lines) + "\n"
    bk.atomic_write_text(out_root / "sweep.tsv", table)
    print(table, end="")
    return 1 if any_failures else 0


def _run_and_eval(args, cfg: PipelineConfig, label: str) -> int:
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    ok, failures = _run_dataset(args, cfg, out_root, keep_going=True)
    report, _ = _evaluate_results(args, out_root, args.tol, allow_missing=True)
    print(metrics.format_report(report, label=label))
    doc = report.to_dict()
    doc["label"] = label
    bk.atomic_write_text(out_root / "report.json",
                         json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return 1 if failures else 0


def cmd_ablate_prompts(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    cfg = replace(cfg, prompt_mode=args.mode, refine=True)
    return _run_and_eval(args, cfg, label=f"prompts={args.mode}")


def cmd_ablate_weighting(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    cfg = replace(cfg, weighting=(args.mode == "on"))
    return _run_and_eval(args, cfg, label=f"weighting={args.mode}")


def cmd_fixture_validate(args) -> int:
    root = Path(args.fixtures)
    if not root.is_dir():
        raise FileNotFoundError(f"fixture root does not exist: {root}")
    scene_ids = bk.ReplayBackend(root).scene_ids()
    if not scene_ids:
        print(f"no fixture scenes under {root}", file=sys.stderr)
        return 1
    all_ok = True
    for scene_id in scene_ids:
        problems = validate_fixture_scene(root / scene_id)
        if problems:
            all_ok = False
            for msg in problems:
                print(f"FAIL {scene_id}: {msg}")
        else:
            print(f"OK   {scene_id}")
    return 0 if all_ok else 1


def validate_fixture_scene(scene_dir: Path) -> list[str]:
    """All integrity problems for one fixture scene (empty list = valid)."""
    problems = []
    for name in bk.CORE_FILES:
        if not (scene_dir / name).is_file():
            problems.append(f"missing {name}")
    if problems:
        return problems
    problems.extend(bk.verify_checksums(scene_dir))

    try:
        rgb = pngio.read_rgb(scene_dir / "rgb.png")
        depth = pngio.read_depth(scene_dir / "depth.png")
        if rgb.shape[:2] != depth.shape:
            problems.append(f"rgb {rgb.shape[:2]} and depth {depth.shape} dims differ")
    except (OSError, ValueError) as exc:
        problems.append(f"image decode: {exc}")
        return problems

    try:
        proposals, _, (h, w) = bk.read_proposals(scene_dir / "proposals.json")
        if (h, w) != depth.shape:
            problems.append(f"proposal grid {(h, w)} != image grid {depth.shape}")
        for s in proposals.scores:
            if not 0.0 <= s <= 1.0:
                problems.append(f"proposal score {s} outside [0, 1]")
                break
    except (bk.FixtureError, ValueError, KeyError, json.JSONDecodeError) as exc:
        problems.append(f"proposals.json: {exc}")

    try:
        attn_values, attn_grid, _ = bk.read_stack(scene_dir / "attn.bin")
        feat_values, feat_grid, _ = bk.read_stack(scene_dir / "feat.bin")
        attn = AttentionStack(attn_values, attn_grid)
        feats = FeatureStack(feat_values, feat_grid)
        if attn_grid != feat_grid:
            problems.append(f"attention grid {attn_grid} != feature grid {feat_grid}")
        if attn.n_patches != feats.n_patches or attn.n_heads != feats.n_heads:
            problems.append("attention and feature stacks disagree on heads/patches")
        if attn_grid[0] > depth.shape[0] or attn_grid[1] > depth.shape[1]:
            problems.append(f"patch grid {attn_grid} larger than image {depth.shape}")
    except (bk.FixtureError, ValueError, KeyError, json.JSONDecodeError) as exc:
        problems.append(f"stacks: {exc}")

    prompted_dir = scene_dir / "prompted"
    if prompted_dir.is_dir():
        for path in sorted(prompted_dir.glob("*.json")):
            try:
                mask, score, doc = bk.read_prompted(path)
                if mask.shape != depth.shape:
                    problems.append(f"{path.name}: mask shape {mask.shape} != image")
                if not 0.0 <= score <= 1.0:
                    problems.append(f"{path.name}: score {score} outside [0, 1]")
                if doc.get("kind") == "points":
                    expect = bk.point_prompt_key([(int(x), int(y))
                                                  for x, y in doc["points"]])
                elif doc.get("kind") == "box":
                    expect = bk.box_prompt_key(tuple(doc["box"]))
                else:
                    problems.append(f"{path.name}: unknown prompt kind {doc.get('kind')!r}")
                    continue
                if path.stem != expect:
                    problems.append(f"{path.name}: key does not match canonical hash")
            except (bk.FixtureError, ValueError, KeyError, json.JSONDecodeError) as exc:
                problems.append(f"{path.name}: {exc}")
    return problems


def cmd_viz(args) -> int:
    doc = json.loads(Path(args.result).read_text())
    rgb = pngio.read_rgb(args.rgb)
    masks = [rle_to_mask(r) for r in doc["masks"]]
    overlay = render_overlay(rgb, masks)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    pngio.write_rgb(out, overlay)
    print(f"overlay written to {out}")
    if args.sim:
        values, grid, _ = bk.read_stack(args.sim)
        sim_img = render_similarity(SimilarityMap(values), rgb.shape[0], rgb.shape[1])
        sim_path = out.with_suffix(".sim.png")
        pngio.write_rgb(sim_path, sim_img)
        print(f"similarity map written to {sim_path}")
    return 0


def render_overlay(rgb: np.ndarray, masks) -> np.ndarray:
    """Alpha-blend each mask in a palette color and draw its boundary."""
    out = rgb.astype(np.float64)
    for i, mask in enumerate(masks):
        color = np.array(PALETTE[i % len(PALETTE)], dtype=np.float64)
        out[mask.bits] = 0.5 * out[mask.bits] + 0.5 * color
        out[boundary_pixels(mask)] = color
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def render_similarity(sim: SimilarityMap, height: int, width: int) -> np.ndarray:
    """Render a similarity map through the viridis table at pixel resolution."""
    pixel = upsample_nearest(sim, height, width)
    index = np.floor((pixel + 1.0) / 2.0 * 255.0 + 0.5).astype(np.intp)
    return VIRIDIS_LUT[np.clip(index, 0, 255)]


if __name__ == "__main__":
    sys.exit(main())
