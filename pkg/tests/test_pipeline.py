import numpy as np
import pytest

from zeroseg.attnfilter import AttentionStack, FeatureStack
from zeroseg.backends import (
    GeneratorParams,
    PromptNotRecordedError,
    box_prompt_key,
    point_prompt_key,
)
from zeroseg.maskset import BinaryMask, ProposalSet
from zeroseg.pipeline import (
    ConfigError,
    PipelineConfig,
    load_config,
    parse_config_text,
    run_scene,
)
from zeroseg.prompts import kmedoids_prompts


class StubBackend:
    """In-memory backend with canned outputs and strict prompt lookups."""

    def __init__(self, proposals, attn, feats, prompted=None):
        self.proposals = proposals
        self.attn = attn
        self.feats = feats
        self.prompted = dict(prompted or {})
        self.box_requests = []

    def generate_proposals(self, image, params):
        return self.proposals

    def extract_features(self, image):
        return self.attn, self.feats

    def predict_with_points(self, image, prompts):
        key = point_prompt_key(prompts)
        if key not in self.prompted:
            raise PromptNotRecordedError(f"missing {key}")
        return self.prompted[key]

    def predict_with_box(self, image, box):
        self.box_requests.append(box)
        key = box_prompt_key(box)
        if key not in self.prompted:
            raise PromptNotRecordedError(f"missing {key}")
        return self.prompted[key]


def region_mask(h, w, y0, x0, y1, x1):
    bits = np.zeros((h, w), dtype=bool)
    bits[y0:y1, x0:x1] = True
    return BinaryMask(bits)


def build_scene():
    """8x8 scene on a 2x2 patch grid with one object and one background mask.

    Features are identical across heads, so cosine similarities depend only
    on per-patch directions: patch 0 is the background reference, patches
    1-2 score 0.2 (objects), patch 3 scores 0.9 (background-like).
    """
    rgb = np.zeros((8, 8, 3), dtype=np.uint8)
    depth = np.full((8, 8), 1000, dtype=np.uint16)
    depth[0, 0] = 500  # non-degenerate range

    directions = np.array([
        [1.0, 0.0],
        [0.2, np.sqrt(1 - 0.04)],
        [0.2, np.sqrt(1 - 0.04)],
        [0.9, np.sqrt(1 - 0.81)],
    ])
    feats = FeatureStack(np.stack([directions, directions]), grid=(2, 2))
    # both heads attend least to patch 0
    attn = AttentionStack(np.array([
        [0.05, 0.5, 0.3, 0.15],
        [0.02, 0.3, 0.4, 0.28],
    ]), grid=(2, 2))

    object_mask = region_mask(8, 8, 0, 4, 4, 8)      # patch 1
    bg_mask = region_mask(8, 8, 4, 4, 8, 8)          # patch 3 (score 0.9)
    proposals = ProposalSet([object_mask, bg_mask], [0.95, 0.9])
    return rgb, depth, proposals, attn, feats, object_mask, bg_mask


def base_config(**overrides):
    defaults = dict(min_area=4, refine=False)
    defaults.update(overrides)
    return PipelineConfig(**defaults)


def refined_version(mask):
    """A refined mask that differs from the proposal at the boundary."""
    bits = mask.bits.copy()
    ys, xs = np.nonzero(bits)
    bits[ys[0], xs[0]] = False
    return BinaryMask(bits)


def test_stage12_filters_background():
    rgb, depth, proposals, attn, feats, object_mask, bg_mask = build_scene()
    backend = StubBackend(proposals, attn, feats)
    result = run_scene(rgb, depth, base_config(), backend, scene_id="toy")
    assert result.scene_id == "toy"
    assert result.image_shape == (8, 8)
    assert len(result.raw_proposals) == 2
    assert len(result.objects) == 1
    assert result.final.masks[0] == object_mask
    assert result.background_index == 0
    assert result.background_scores == pytest.approx([0.2, 0.9], abs=1e-9)
    assert result.prompts == []
    assert set(result.timings) == {"stage1_proposals", "stage2_filtering",
                                   "stage3_refinement"}


def test_refinement_replaces_masks():
    rgb, depth, proposals, attn, feats, object_mask, _ = build_scene()
    cfg = base_config(refine=True)
    prompts = kmedoids_prompts(object_mask, cfg.k_prompts, cfg.seed)
    refined = refined_version(object_mask)
    backend = StubBackend(proposals, attn, feats,
                          prompted={point_prompt_key(prompts): (refined, 0.97)})
    result = run_scene(rgb, depth, cfg, backend)
    assert len(result.final) == 1
    assert result.final.masks[0] == refined
    assert result.final.scores == [0.97]
    assert result.prompts == [prompts]


def test_empty_prompted_prediction_falls_back():
    rgb, depth, proposals, attn, feats, object_mask, _ = build_scene()
    cfg = base_config(refine=True)
    prompts = kmedoids_prompts(object_mask, cfg.k_prompts, cfg.seed)
    empty = BinaryMask(np.zeros((8, 8), dtype=bool))
    backend = StubBackend(proposals, attn, feats,
                          prompted={point_prompt_key(prompts): (empty, 0.99)})
    result = run_scene(rgb, depth, cfg, backend)
    assert len(result.final) == 1
    assert result.final.masks[0] == object_mask          # proposal retained
    assert result.final.scores == [proposals.scores[0]]  # and its score


def test_all_background_scene_is_empty_not_error():
    rgb, depth, proposals, attn, feats, *_ = build_scene()
    backend = StubBackend(proposals, attn, feats)
    result = run_scene(rgb, depth, base_config(tau=0.1, refine=True), backend)
    assert len(result.final) == 0
    assert len(result.objects) == 0


def test_monotone_mask_counts():
    rgb, depth, proposals, attn, feats, *_ = build_scene()
    backend = StubBackend(proposals, attn, feats)
    result = run_scene(rgb, depth, base_config(), backend)
    assert len(result.size_filtered) >= len(result.objects)
    assert len(result.final) <= len(result.objects) or not result.final


def test_deterministic_repeat():
    rgb, depth, proposals, attn, feats, object_mask, _ = build_scene()
    cfg = base_config(refine=True)
    prompts = kmedoids_prompts(object_mask, cfg.k_prompts, cfg.seed)
    refined = refined_version(object_mask)
    prompted = {point_prompt_key(prompts): (refined, 0.97)}
    r1 = run_scene(rgb, depth, cfg, StubBackend(proposals, attn, feats, prompted))
    r2 = run_scene(rgb, depth, cfg, StubBackend(proposals, attn, feats, prompted))
    assert [m.bits.tobytes() for m in r1.final.masks] == \
        [m.bits.tobytes() for m in r2.final.masks]
    assert r1.final.scores == r2.final.scores
    assert np.array_equal(r1.background_scores, r2.background_scores)


def test_dimension_mismatch_rejected():
    rgb, depth, proposals, attn, feats, *_ = build_scene()
    backend = StubBackend(proposals, attn, feats)
    with pytest.raises(ValueError, match="dimensions differ"):
        run_scene(rgb, depth[:4], base_config(), backend, scene_id="s")


def test_weighting_off_uses_unit_weights():
    rgb, depth, proposals, attn, feats, *_ = build_scene()
    backend = StubBackend(proposals, attn, feats)
    on = run_scene(rgb, depth, base_config(weighting=True), backend)
    off = run_scene(rgb, depth, base_config(weighting=False), backend)
    assert np.array_equal(off.head_weights, np.ones(2))
    assert not np.array_equal(on.head_weights, off.head_weights)


def test_stage3_overlap_resolution_prefers_higher_score():
    rgb, depth, _, attn, feats, *_ = build_scene()
    # two disjoint object proposals in the low-similarity patches 1 and 2
    obj_a = region_mask(8, 8, 0, 4, 4, 8)   # patch 1
    obj_b = region_mask(8, 8, 4, 0, 8, 4)   # patch 2
    proposals = ProposalSet([obj_a, obj_b], [0.9, 0.9])
    cfg = base_config(refine=True, refilter=False)
    pa = kmedoids_prompts(obj_a, cfg.k_prompts, cfg.seed)
    pb = kmedoids_prompts(obj_b, cfg.k_prompts, cfg.seed)
    # refined predictions overlap on rows 2..4 of columns 2..6
    ra = region_mask(8, 8, 0, 2, 5, 8)
    rb = region_mask(8, 8, 2, 0, 8, 6)
    backend = StubBackend(proposals, attn, feats, prompted={
        point_prompt_key(pa): (ra, 0.95),
        point_prompt_key(pb): (rb, 0.90),
    })
    result = run_scene(rgb, depth, cfg, backend)
    assert len(result.final) == 2
    # higher score committed first and keeps the contested pixels
    assert result.final.scores == [0.95, 0.90]
    assert result.final.masks[0] == ra
    assert result.final.masks[1] == BinaryMask(rb.bits & ~ra.bits)
    overlap = result.final.masks[0].bits & result.final.masks[1].bits
    assert not overlap.any()


def test_refilter_drops_small_refined_masks():
    rgb, depth, proposals, attn, feats, object_mask, _ = build_scene()
    cfg_keep = base_config(refine=True, refilter=False, min_area=4)
    prompts = kmedoids_prompts(object_mask, cfg_keep.k_prompts, cfg_keep.seed)
    tiny = region_mask(8, 8, 0, 4, 1, 6)  # 2 px, below min_area
    prompted = {point_prompt_key(prompts): (tiny, 0.9)}
    kept = run_scene(rgb, depth, cfg_keep,
                     StubBackend(proposals, attn, feats, prompted))
    assert len(kept.final) == 1 and kept.final.masks[0] == tiny
    cfg_drop = base_config(refine=True, refilter=True, min_area=4)
    dropped = run_scene(rgb, depth, cfg_drop,
                        StubBackend(proposals, attn, feats, prompted))
    assert len(dropped.final) == 0


def test_random_prompt_mode_samples_in_mask():
    rgb, depth, proposals, attn, feats, object_mask, _ = build_scene()
    cfg = base_config(refine=True, prompt_mode="random", seed=5)
    refined = refined_version(object_mask)

    class Recorder(StubBackend):
        def predict_with_points(self, image, prompts):
            self.seen = prompts
            return refined, 0.9

    backend = Recorder(proposals, attn, feats)
    result = run_scene(rgb, depth, cfg, backend)
    assert len(backend.seen) == cfg.k_prompts
    assert all(object_mask.bits[p.y, p.x] for p in backend.seen)
    assert result.prompts == [backend.seen]


def test_boxes_prompt_mode_uses_bbox():
    rgb, depth, proposals, attn, feats, object_mask, _ = build_scene()
    cfg = base_config(refine=True, prompt_mode="boxes")
    refined = refined_version(object_mask)
    backend = StubBackend(proposals, attn, feats,
                          prompted={box_prompt_key(object_mask.bbox): (refined, 0.92)})
    result = run_scene(rgb, depth, cfg, backend)
    assert backend.box_requests == [object_mask.bbox]
    assert result.final.masks[0] == refined
    assert result.prompts == [[]]


# ---------------------------------------------------------------------------
# config

def test_config_defaults():
    cfg = PipelineConfig()
    assert (cfg.theta, cfg.k_max, cfg.tau, cfg.k_prompts) == (0.8, 3, 0.47, 3)
    assert (cfg.min_area, cfg.max_frac) == (500, 0.8)
    assert cfg.refine and cfg.weighting and cfg.refilter
    assert cfg.prompt_mode == "cluster"
    assert cfg.generator == GeneratorParams()


def test_config_validation():
    with pytest.raises(ConfigError):
        PipelineConfig(theta=0.0)
    with pytest.raises(ConfigError):
        PipelineConfig(tau=1.5)
    with pytest.raises(ConfigError):
        PipelineConfig(prompt_mode="laser")


def test_parse_config_text_full():
    cfg = parse_config_text("""
        # pipeline knobs
        theta = 0.7
        k_max = 4
        tau = 0.33
        refine = false
        weighting = off
        prompt_mode = random
        min_area = 100
        stability_score_thresh = 0.9
        points_per_batch = 32
    """)
    assert cfg.theta == 0.7 and cfg.k_max == 4 and cfg.tau == 0.33
    assert cfg.refine is False and cfg.weighting is False
    assert cfg.prompt_mode == "random" and cfg.min_area == 100
    assert cfg.generator.stability_score_thresh == 0.9
    assert cfg.generator.points_per_batch == 32
    # untouched keys keep their defaults
    assert cfg.max_frac == 0.8 and cfg.generator.box_nms_thresh == 0.5


def test_parse_config_rejects_unknown_and_duplicates():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text("not_a_knob = 3")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("tau = 0.4\ntau = 0.5")
    with pytest.raises(ConfigError, match="bad boolean"):
        parse_config_text("refine = maybe")
    with pytest.raises(ConfigError, match="key=value"):
        parse_config_text("tau 0.4")


def test_load_config_none_gives_defaults(tmp_path):
    assert load_config(None) == PipelineConfig()
    path = tmp_path / "cfg.txt"
    path.write_text("tau = 0.25\n")
    assert load_config(path).tau == 0.25


def test_flat_dict_round_trip():
    cfg = PipelineConfig(tau=0.3, refine=False)
    d = cfg.to_flat_dict()
    assert d["tau"] == 0.3 and d["refine"] is False
    assert d["box_nms_thresh"] == 0.5
    assert len(d) == 16
