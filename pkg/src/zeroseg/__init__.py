"""Zero-shot unseen-object instance segmentation pipeline and evaluation."""

from .attnfilter import (
    AttentionStack,
    FeatureStack,
    SimilarityMap,
    background_patch_index,
    filter_background,
    head_entropy,
    head_weights,
    score_masks,
    similarity_map,
)
from .backends import BridgeBackend, GeneratorParams, ReplayBackend
from .depthcolor import VIRIDIS_LUT, NoValidDepthError, colorize_depth
from .maskset import (
    BinaryMask,
    ProposalSet,
    iou,
    make_independent,
    mask_to_rle,
    remove_union_masks,
    resolve_overlaps,
    rle_to_mask,
    size_filter,
)
from .metrics import (
    EvalReport,
    SceneEval,
    aggregate,
    boundary_prf,
    evaluate_scene,
    f_at_75,
    match_hungarian,
    overlap_prf,
)
from .pipeline import PipelineConfig, SegmentationResult, load_config, run_scene
from .prompts import PointPrompt, kmedoids_prompts

__version__ = "0.1.0"

__all__ = [
    "AttentionStack", "BinaryMask", "BridgeBackend", "EvalReport", "FeatureStack",
    "GeneratorParams", "NoValidDepthError", "PipelineConfig", "PointPrompt",
    "ProposalSet", "ReplayBackend", "SceneEval", "SegmentationResult",
    "SimilarityMap", "VIRIDIS_LUT", "aggregate", "background_patch_index",
    "boundary_prf", "colorize_depth", "evaluate_scene", "f_at_75",
    "filter_background", "head_entropy", "head_weights", "iou", "kmedoids_prompts",
    "load_config", "make_independent", "mask_to_rle", "match_hungarian",
    "overlap_prf", "remove_union_masks", "resolve_overlaps", "rle_to_mask",
    "run_scene", "score_masks", "similarity_map", "size_filter",
]
