"""Foundation-model extractor producing replayable fixture bundles."""

from .colorize import VIRIDIS_LUT, NoValidDepthError, colorize_depth
from .extract import bridge_extract, extract_scene
from .models import (
    DEFAULT_DESCRIPTOR,
    DEFAULT_SEGMENTER,
    ExtractorError,
    SamSegmenter,
    VitDescriptor,
)
from .serve import answer_pending, serve_prompts

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_DESCRIPTOR", "DEFAULT_SEGMENTER", "ExtractorError",
    "NoValidDepthError", "SamSegmenter", "VIRIDIS_LUT", "VitDescriptor",
    "answer_pending", "bridge_extract", "colorize_depth", "extract_scene",
    "serve_prompts",
]
