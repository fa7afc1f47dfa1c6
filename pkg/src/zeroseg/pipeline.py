"""Three-stage segmentation pipeline.

Stage 1 turns the depth frame into proposals: viridis colorization, the
segmentation backend's automatic generator, union-mask removal + overlap
resolution, and a size filter.  Stage 2 scores each surviving mask
against an attention-derived background patch and drops background masks.
Stage 3 samples k-medoid point prompts inside each remaining object and
asks the promptable backend to re-segment it, then resolves overlaps by
prediction score and (optionally) re-applies the size filter.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import attnfilter, maskset
from .attnfilter import SimilarityMap
from .backends import GeneratorParams
from .depthcolor import colorize_depth
from .maskset import BinaryMask, ProposalSet
from .prompts import PointPrompt, kmedoids_prompts

PROMPT_MODES = ("cluster", "random", "boxes")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    """All pipeline knobs with their reference defaults.

    ``refine=False`` runs stages 1-2 only; ``weighting=False`` replaces the
    entropy head weights with ones; ``refilter`` re-applies the size filter
    to refined masks; ``prompt_mode`` selects cluster-center, random-point,
    or bounding-box prompting for stage 3.
    """

    theta: float = 0.8
    k_max: int = 3
    tau: float = 0.47
    k_prompts: int = 3
    min_area: int = 500
    max_frac: float = 0.8
    seed: int = 0
    refine: bool = True
    weighting: bool = True
    refilter: bool = True
    prompt_mode: str = "cluster"
    generator: GeneratorParams = field(default_factory=GeneratorParams)

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError(f"theta must be in (0, 1], got {self.theta}")
        if self.k_max < 2:
            raise ConfigError(f"k_max must be >= 2, got {self.k_max}")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must be in [0, 1], got {self.tau}")
        if self.k_prompts < 1:
            raise ConfigError(f"k_prompts must be >= 1, got {self.k_prompts}")
        if self.min_area < 0:
            raise ConfigError(f"min_area must be >= 0, got {self.min_area}")
        if not 0.0 < self.max_frac <= 1.0:
            raise ConfigError(f"max_frac must be in (0, 1], got {self.max_frac}")
        if self.prompt_mode not in PROMPT_MODES:
            raise ConfigError(f"prompt_mode must be one of {PROMPT_MODES}, "
                              f"got {self.prompt_mode!r}")

    def to_flat_dict(self) -> dict:
        d = {
            "theta": self.theta, "k_max": self.k_max, "tau": self.tau,
            "k_prompts": self.k_prompts, "min_area": self.min_area,
            "max_frac": self.max_frac, "seed": self.seed, "refine": self.refine,
            "weighting": self.weighting, "refilter": self.refilter,
            "prompt_mode": self.prompt_mode,
        }
        d.update(self.generator.to_dict())
        return d


_INT_KEYS = {"k_max", "k_prompts", "min_area", "seed",
             "min_mask_region_area", "points_per_batch"}
_FLOAT_KEYS = {"theta", "tau", "max_frac", "box_nms_thresh",
               "crop_overlap_ratio", "stability_score_thresh"}
_BOOL_KEYS = {"refine", "weighting", "refilter"}
_STR_KEYS = {"prompt_mode"}
_GENERATOR_KEYS = {"box_nms_thresh", "crop_overlap_ratio", "min_mask_region_area",
                   "points_per_batch", "stability_score_thresh"}


def parse_config_text(text: str) -> PipelineConfig:
    """Parse the flat key=value config format.

    Every key is optional and defaults to the reference value; blank lines
    and ``#`` comments are ignored; unknown or duplicate keys are errors.
    """
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if key in _INT_KEYS:
            values[key] = int(value)
        elif key in _FLOAT_KEYS:
            values[key] = float(value)
        elif key in _BOOL_KEYS:
            lowered = value.lower()
            if lowered in ("true", "1", "yes", "on"):
                values[key] = True
            elif lowered in ("false", "0", "no", "off"):
                values[key] = False
            else:
                raise ConfigError(f"line {lineno}: bad boolean {value!r} for {key}")
        elif key in _STR_KEYS:
            values[key] = value
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    gen_kwargs = {k: values.pop(k) for k in list(values) if k in _GENERATOR_KEYS}
    return PipelineConfig(generator=GeneratorParams(**gen_kwargs), **values)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    return parse_config_text(Path(path).read_text())


@dataclass
class SegmentationResult:
    """Final masks plus every per-stage intermediate and stage timings."""

    scene_id: str
    image_shape: tuple[int, int]
    final: ProposalSet
    raw_proposals: ProposalSet
    independent: ProposalSet
    size_filtered: ProposalSet
    objects: ProposalSet
    background_scores: np.ndarray
    head_weights: np.ndarray
    background_index: int
    similarity: SimilarityMap
    prompts: list[list[PointPrompt]]
    refined: ProposalSet
    timings: dict[str, float]


def run_scene(rgb: np.ndarray, depth: np.ndarray, cfg: PipelineConfig,
              backend, scene_id: str = "") -> SegmentationResult:
    """Run the full pipeline on one scene.

    ``backend`` must provide generate_proposals / extract_features /
    predict_with_points (and predict_with_box for prompt_mode="boxes").
    Deterministic given the config seed and a replayed backend.
    """
    rgb = np.asarray(rgb)
    depth = np.asarray(depth)
    if rgb.shape[:2] != depth.shape[:2]:
        raise ValueError(f"rgb {rgb.shape[:2]} and depth {depth.shape[:2]} "
                         f"dimensions differ for scene {scene_id!r}")
    timings: dict[str, float] = {}

    # stage 1: proposals from colorized depth
    t0 = time.perf_counter()
    colorized = colorize_depth(depth)
    raw = backend.generate_proposals(colorized, cfg.generator)
    independent = maskset.make_independent(raw, cfg.theta, cfg.k_max)
    sized = maskset.size_filter(independent, cfg.min_area, cfg.max_frac)
    timings["stage1_proposals"] = time.perf_counter() - t0

    # stage 2: background filtering on the RGB image's features
    t0 = time.perf_counter()
    attn, feats = backend.extract_features(rgb)
    if cfg.weighting:
        weights = attnfilter.head_weights(attnfilter.head_entropy(attn))
    else:
        weights = np.ones(attn.n_heads)
    bg_index = attnfilter.background_patch_index(attn, weights)
    sim = attnfilter.similarity_map(feats, weights, bg_index)
    scores = attnfilter.score_masks(sized, sim)
    objects = attnfilter.filter_background(sized, scores, cfg.tau)
    timings["stage2_filtering"] = time.perf_counter() - t0

    # stage 3: prompted re-segmentation
    t0 = time.perf_counter()
    prompts: list[list[PointPrompt]] = []
    if cfg.refine and len(objects):
        refined = _refine_objects(rgb, objects, cfg, backend, prompts)
        final = _resolve_by_score(refined)
        if cfg.refilter:
            final = maskset.size_filter(final, cfg.min_area, cfg.max_frac)
    else:
        refined = objects.subset(range(len(objects)))
        final = refined
    timings["stage3_refinement"] = time.perf_counter() - t0

    return SegmentationResult(
        scene_id=scene_id, image_shape=(int(rgb.shape[0]), int(rgb.shape[1])),
        final=final, raw_proposals=raw, independent=independent,
        size_filtered=sized, objects=objects, background_scores=scores,
        head_weights=weights, background_index=bg_index, similarity=sim,
        prompts=prompts, refined=refined, timings=timings,
    )


def _refine_objects(rgb: np.ndarray, objects: ProposalSet, cfg: PipelineConfig,
                    backend, prompts_out: list[list[PointPrompt]]) -> ProposalSet:
    masks: list[BinaryMask] = []
    scores: list[float] = []
    for idx, mask in enumerate(objects.masks):
        if cfg.prompt_mode == "boxes":
            prompt_points: list[PointPrompt] = []
            predicted, score = backend.predict_with_box(rgb, mask.bbox)
        else:
            if cfg.prompt_mode == "cluster":
                prompt_points = kmedoids_prompts(mask, cfg.k_prompts, cfg.seed)
            else:
                prompt_points = _random_prompts(mask, cfg.k_prompts, cfg.seed, idx)
            predicted, score = backend.predict_with_points(rgb, prompt_points)
        prompts_out.append(prompt_points)
        if predicted.area == 0:
            # refinement must never lose a detected object
            predicted, score = mask, objects.scores[idx]
        masks.append(predicted)
        scores.append(score)
    return ProposalSet(masks, scores, source="prompted")


def _random_prompts(mask: BinaryMask, k: int, seed: int, obj_index: int) -> list[PointPrompt]:
    """k uniformly sampled in-mask points, seeded per object index."""
    coords = np.argwhere(mask.bits)
    if coords.shape[0] == 0:
        raise ValueError("cannot sample prompts from an empty mask")
    rng = np.random.default_rng([seed, obj_index])
    take = min(k, coords.shape[0])
    chosen = rng.choice(coords.shape[0], size=take, replace=False)
    chosen.sort()
    return [PointPrompt(x=int(coords[i][1]), y=int(coords[i][0])) for i in chosen]


def _resolve_by_score(refined: ProposalSet) -> ProposalSet:
    """Make refined masks disjoint; higher score wins, ties to larger area."""
    n = len(refined)
    order = sorted(range(n), key=lambda i: (-refined.scores[i], -refined.masks[i].area, i))
    return maskset._subtract_in_order(refined, order)
