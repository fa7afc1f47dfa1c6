#!/usr/bin/env python3
"""Regenerate the bundled test fixtures, dataset, and golden outputs.

Four synthetic 64x96 RGB-D scenes are built with hand-placed objects on an
8x12 patch grid (8 px patches).  Per-patch feature directions are chosen so
mask background scores land in known bands: objects in 0.2..0.55,
background/table masks around 0.8..0.9.  Because features are identical
across heads (except the 'sparse' scene), the entropy weighting provably
cancels in the similarity map and scores are exactly the designed values.

The recorded prompted predictions cover every mask that can survive stage 1
(cluster and box prompts; random prompts for the default-threshold object
sets), so runs at any background threshold replay without misses.

Run from the repository root:  python tools/gen_fixtures.py
"""

from __future__ import annotations

import json
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from zeroseg import cli, maskset, pngio
from zeroseg.backends import (
    GeneratorParams,
    box_prompt_key,
    point_prompt_key,
    prompted_request_for_box,
    prompted_request_for_points,
    write_checksums,
    write_prompted,
    write_proposals,
    write_stack,
)
from zeroseg.maskset import BinaryMask, ProposalSet
from zeroseg.pipeline import PipelineConfig, _random_prompts
from zeroseg.prompts import kmedoids_prompts

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "tests" / "data"

H, W = 64, 96
K = 8
GRID = (H // K, W // K)  # (8, 12)
N_PATCHES = GRID[0] * GRID[1]
BG_PATCH = 11  # patch (0, 11): forced attention minimum
N_HEADS = 4
HEAD_DIM = 4

CONFIG = PipelineConfig()  # reference defaults drive the goldens


def rect(y0, x0, y1, x1):
    bits = np.zeros((H, W), dtype=bool)
    bits[y0:y1, x0:x1] = True
    return BinaryMask(bits)


def erode_rect(y0, x0, y1, x1, px):
    return rect(y0 + px, x0 + px, y1 - px, x1 - px)


def direction(cos_to_bg):
    """Unit direction in the plane spanned by the background axis."""
    return np.array([cos_to_bg, np.sqrt(max(0.0, 1.0 - cos_to_bg ** 2)), 0.0, 0.0])


def patch_grid_directions(object_patches, default_cos=None):
    """Per-patch feature directions; object patch blocks override background."""
    dirs = np.zeros((N_PATCHES, HEAD_DIM))
    for p in range(N_PATCHES):
        # deterministic mild variation keeps background patches from being
        # perfectly identical
        base = 0.86 + 0.04 * ((p * 37) % 7) / 7.0 if default_cos is None else default_cos
        dirs[p] = direction(base)
    dirs[BG_PATCH] = direction(1.0)
    for (rows, cols), cos_val in object_patches:
        for r in rows:
            for c in cols:
                dirs[r * GRID[1] + c] = direction(cos_val)
    return dirs


def focused_attention(object_patch_blocks):
    """Heads attending to the object patches; entropy varies across heads."""
    attn = np.full((N_HEADS, N_PATCHES), 0.02)
    strengths = (0.8, 0.5, 0.12, 0.08)
    for head in range(N_HEADS):
        for (rows, cols) in object_patch_blocks:
            for r in rows:
                for c in cols:
                    attn[head, r * GRID[1] + c] = strengths[head]
    attn[:, BG_PATCH] = 0.001
    return attn


def base_depth():
    rows = np.linspace(1200, 2000, H).astype(np.uint16)
    depth = np.tile(rows[:, None], (1, W))
    depth[58:62, 0:6] = 0  # invalid sensor patch
    return depth


def base_rgb():
    rgb = np.zeros((H, W, 3), dtype=np.uint8)
    rgb[..., 0] = np.linspace(40, 90, W, dtype=np.uint8)[None, :]
    rgb[..., 1] = np.linspace(60, 120, H, dtype=np.uint8)[:, None]
    rgb[..., 2] = 70
    return rgb


def paint(rgb, mask, color):
    rgb[mask.bits] = color


class SceneSpec:
    def __init__(self, scene_id, depth, rgb, labels, proposals, scores,
                 attn, feats, refinements):
        self.scene_id = scene_id
        self.depth = depth
        self.rgb = rgb
        self.labels = labels
        self.proposals = proposals
        self.scores = scores
        self.attn = attn
        self.feats = feats
        # list of (proposal_mask, refined_mask, refined_score); masks not in
        # this table are refined to themselves at a low score
        self.refinements = refinements


def head_identical_features(dirs):
    per_head = np.tile(dirs[None, :, :], (N_HEADS, 1, 1))
    return per_head


def scene_boxes():
    """Two objects; the generator also emits their union, a grown duplicate,
    the table, and a speck."""
    true_a = rect(8, 8, 32, 40)     # 768 px, patches rows 1-3 cols 1-4
    true_b = rect(32, 48, 56, 88)   # 960 px, patches rows 4-6 cols 6-10
    prop_a = erode_rect(8, 8, 32, 40, 1)    # 660 px
    prop_b = erode_rect(32, 48, 56, 88, 1)  # 836 px
    union = BinaryMask(prop_a.bits | prop_b.bits)
    grown_b = rect(28, 44, 60, 92)  # 1536 px, remainder becomes a ring
    table = BinaryMask(~(true_a.bits | true_b.bits))  # 4416 px
    speck = rect(60, 0, 63, 3)      # 9 px, removed by the size filter

    depth = base_depth()
    depth[true_a.bits] = 800
    depth[true_b.bits] = 900
    rgb = base_rgb()
    paint(rgb, true_a, (200, 60, 60))
    paint(rgb, true_b, (60, 60, 200))
    labels = np.zeros((H, W), dtype=np.uint8)
    labels[true_a.bits] = 1
    labels[true_b.bits] = 2

    dirs = patch_grid_directions([
        ((range(1, 4), range(1, 5)), 0.25),   # object A patches
        ((range(4, 7), range(6, 11)), 0.35),  # object B patches
    ])
    attn = focused_attention([(range(1, 4), range(1, 5)),
                              (range(4, 7), range(6, 11))])
    feats = head_identical_features(dirs)

    return SceneSpec(
        "boxes", depth, rgb, labels,
        [union, prop_a, prop_b, grown_b, table, speck],
        [0.90, 0.95, 0.93, 0.70, 0.60, 0.50],
        attn, feats,
        [(prop_a, true_a, 0.97), (prop_b, true_b, 0.96)],
    )


def scene_stack():
    """Occlusion: the second object's proposal includes the first object."""
    true_c = rect(16, 16, 40, 48)               # 768 px
    d_region = rect(24, 40, 48, 72)             # 768 px, overlaps C
    true_d = BinaryMask(d_region.bits & ~true_c.bits)  # L-shape, 640 px
    table = BinaryMask(~(true_c.bits | true_d.bits))
    full = rect(0, 0, H, W)                     # > 80% of image: size-filtered
    union = BinaryMask(true_c.bits | d_region.bits)

    depth = base_depth()
    depth[d_region.bits] = 1100
    depth[true_c.bits] = 700
    rgb = base_rgb()
    paint(rgb, true_c, (220, 160, 40))
    paint(rgb, true_d, (40, 180, 90))
    labels = np.zeros((H, W), dtype=np.uint8)
    labels[true_c.bits] = 1
    labels[true_d.bits] = 2

    dirs = patch_grid_directions([
        ((range(2, 5), range(2, 6)), 0.28),   # C patches
        ((range(3, 6), range(5, 9)), 0.42),   # D patches (override overlap)
    ])
    attn = focused_attention([(range(2, 5), range(2, 6)),
                              (range(3, 6), range(5, 9))])
    feats = head_identical_features(dirs)

    return SceneSpec(
        "stack", depth, rgb, labels,
        [union, true_c, d_region, table, full],
        [0.88, 0.97, 0.91, 0.55, 0.52],
        attn, feats,
        # overlap resolution already reduces D's proposal to the true L-shape
        [(true_c, true_c, 0.98), (true_d, true_d, 0.95)],
    )


def scene_sparse():
    """Per-head disagreement: only the entropy weighting keeps the object.

    Focused heads 0-1 see the object at similarity 0.2; diffuse heads 2-3
    see it at 0.85.  With entropy weights the mean object score stays near
    0.40 (kept at tau 0.47); with unit weights it rises to about 0.52
    (dropped), which is what the weighting ablation demonstrates.
    """
    true_e = rect(24, 32, 48, 64)               # 768 px
    prop_e = erode_rect(24, 32, 48, 64, 2)      # 560 px
    table = BinaryMask(~true_e.bits)
    table = BinaryMask(table.bits & rect(0, 0, 56, W).bits)  # keep under 80%
    speck = rect(0, 92, 2, 95)                  # 6 px

    depth = base_depth()
    depth[true_e.bits] = 600
    rgb = base_rgb()
    paint(rgb, true_e, (160, 60, 180))
    labels = np.zeros((H, W), dtype=np.uint8)
    labels[true_e.bits] = 1

    e_patches = (range(3, 6), range(4, 8))
    dirs = patch_grid_directions([(e_patches, 0.2)])
    feats = np.zeros((N_HEADS, N_PATCHES, HEAD_DIM))
    feats[0] = dirs
    feats[1] = dirs
    for head in (2, 3):
        for p in range(N_PATCHES):
            feats[head, p] = direction(0.90 + 0.04 * ((p * 7) % 5) / 5.0)
        for r in e_patches[0]:
            for c in e_patches[1]:
                feats[head, r * GRID[1] + c] = direction(0.85)
        feats[head, BG_PATCH] = direction(1.0)
    attn = np.zeros((N_HEADS, N_PATCHES))
    attn[0] = 0.002
    attn[1] = 0.004
    for r in e_patches[0]:
        for c in e_patches[1]:
            attn[0, r * GRID[1] + c] = 0.95
            attn[1, r * GRID[1] + c] = 0.85
    attn[0, BG_PATCH] = 0.001
    attn[1, BG_PATCH] = 0.001
    attn[2] = 0.30   # exactly uniform: maximum entropy, lowest weight
    attn[3] = 0.25

    return SceneSpec(
        "sparse", depth, rgb, labels,
        [prop_e, table, speck],
        [0.94, 0.58, 0.45],
        attn, feats,
        [(prop_e, true_e, 0.97)],
    )


def scene_allbg():
    """The single object scores above the default threshold: empty result."""
    true_f = rect(16, 40, 40, 72)   # 768 px
    table = BinaryMask(~true_f.bits & rect(0, 0, 56, W).bits)  # keep under 80%

    depth = base_depth()
    depth[true_f.bits] = 900
    rgb = base_rgb()
    paint(rgb, true_f, (90, 200, 220))
    labels = np.zeros((H, W), dtype=np.uint8)
    labels[true_f.bits] = 1

    dirs = patch_grid_directions([
        ((range(2, 5), range(5, 9)), 0.55),   # F patches: above tau=0.47
    ])
    attn = focused_attention([(range(2, 5), range(5, 9))])
    feats = head_identical_features(dirs)

    return SceneSpec(
        "allbg", depth, rgb, labels,
        [true_f, table],
        [0.92, 0.61],
        attn, feats,
        [(true_f, true_f, 0.90)],
    )


def stage1_masks(spec: SceneSpec) -> ProposalSet:
    proposals = ProposalSet(spec.proposals, spec.scores)
    independent = maskset.make_independent(proposals, CONFIG.theta, CONFIG.k_max)
    return maskset.size_filter(independent, CONFIG.min_area, CONFIG.max_frac)


def refined_for(spec: SceneSpec, mask: BinaryMask):
    for proposal, refined, score in spec.refinements:
        if mask == proposal:
            return refined, score
    return mask, 0.40  # background-ish masks refine to themselves


def write_scene(spec: SceneSpec, fixtures: Path, dataset: Path):
    scene_dir = fixtures / spec.scene_id
    if scene_dir.exists():
        shutil.rmtree(scene_dir)
    scene_dir.mkdir(parents=True)

    pngio.write_rgb(scene_dir / "rgb.png", spec.rgb)
    pngio.write_depth(scene_dir / "depth.png", spec.depth)
    write_proposals(scene_dir / "proposals.json",
                    ProposalSet(spec.proposals, spec.scores),
                    GeneratorParams(), H, W)
    write_stack(scene_dir / "attn.bin", spec.attn, GRID)
    write_stack(scene_dir / "feat.bin", spec.feats, GRID, extra={"source": "key"})
    write_checksums(scene_dir)

    # record prompted predictions for every mask stage 1 can emit
    sized = stage1_masks(spec)
    for idx, mask in enumerate(sized.masks):
        refined, score = refined_for(spec, mask)
        pts = kmedoids_prompts(mask, CONFIG.k_prompts, CONFIG.seed)
        write_prompted(scene_dir, point_prompt_key(pts),
                       prompted_request_for_points(pts), refined, score)
        write_prompted(scene_dir, box_prompt_key(mask.bbox),
                       prompted_request_for_box(mask.bbox), refined, score)
    # random-prompt recordings for the default-threshold object order
    from zeroseg import attnfilter
    attn_stack = attnfilter.AttentionStack(spec.attn, GRID)
    feat_stack = attnfilter.FeatureStack(spec.feats, GRID)
    weights = attnfilter.head_weights(attnfilter.head_entropy(attn_stack))
    bg = attnfilter.background_patch_index(attn_stack, weights)
    sim = attnfilter.similarity_map(feat_stack, weights, bg)
    scores = attnfilter.score_masks(sized, sim)
    objects = attnfilter.filter_background(sized, scores, CONFIG.tau)
    for idx, mask in enumerate(objects.masks):
        refined, score = refined_for(spec, mask)
        pts = _random_prompts(mask, CONFIG.k_prompts, CONFIG.seed, idx)
        write_prompted(scene_dir, point_prompt_key(pts),
                       prompted_request_for_points(pts), refined, score)

    # dataset files
    pngio.write_rgb(dataset / f"{spec.scene_id}_rgb.png", spec.rgb)
    pngio.write_depth(dataset / f"{spec.scene_id}_depth.png", spec.depth)
    pngio.write_label(dataset / f"{spec.scene_id}_label.png", spec.labels)

    return {spec.scene_id: {"sized": len(sized), "objects": len(objects),
                            "scores": [round(float(s), 4) for s in scores]}}


def main() -> int:
    dataset = DATA / "dataset"
    fixtures = DATA / "fixtures"
    goldens = DATA / "goldens"
    for d in (dataset, fixtures, goldens):
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)

    summary = {}
    for spec in (scene_boxes(), scene_stack(), scene_sparse(), scene_allbg()):
        summary.update(write_scene(spec, fixtures, dataset))

    # golden run + eval with the reference config
    with tempfile.TemporaryDirectory() as tmp:
        results = Path(tmp) / "results"
        rc = cli.main(["run", str(dataset), "--layout", "flat",
                       "--backend", f"replay:{fixtures}",
                       "--out", str(results)])
        if rc != 0:
            print("golden run failed", file=sys.stderr)
            return 1
        rc = cli.main(["eval", str(dataset), str(results), "--layout", "flat"])
        if rc != 0:
            print("golden eval failed", file=sys.stderr)
            return 1
        golden_results = goldens / "results"
        golden_results.mkdir(parents=True)
        for result in sorted(results.rglob("result.json")):
            rel = result.relative_to(results)
            target = golden_results / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(result, target)
        shutil.copyfile(results / "report.json", goldens / "report.json")

    print(json.dumps(summary, indent=2))
    print("fixtures, dataset, and goldens regenerated under", DATA)
    return 0


if __name__ == "__main__":
    sys.exit(main())
