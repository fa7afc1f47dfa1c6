"""Background-mask removal from per-head ViT attention and patch features.

A self-supervised ViT attends most strongly to salient objects, so the
patch with the least (entropy-weighted) attention across heads is a good
background reference.  Cosine similarity between every patch feature and
that background patch, computed on entropy-weighted per-head features,
yields a patch-resolution background score map; masks whose mean score
exceeds a threshold are dropped as background.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .maskset import ProposalSet


@dataclass(frozen=True)
class AttentionStack:
    """CLS-to-patch attention per head: values has shape (n_heads, n_patches).

    grid is the (rows, cols) patch layout with rows * cols == n_patches.
    """

    values: np.ndarray
    grid: tuple[int, int]

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"attention must be (n_heads, n_patches), got {arr.shape}")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError("attention values must be finite and non-negative")
        if not (arr > 0).any(axis=1).all():
            raise ValueError("degenerate head: all-zero attention row")
        h, w = self.grid
        if h * w != arr.shape[1]:
            raise ValueError(f"grid {self.grid} does not cover {arr.shape[1]} patches")
        object.__setattr__(self, "values", arr)

    @property
    def n_heads(self) -> int:
        return self.values.shape[0]

    @property
    def n_patches(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FeatureStack:
    """Per-head patch features: values has shape (n_heads, n_patches, head_dim)."""

    values: np.ndarray
    grid: tuple[int, int]

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"features must be (n_heads, n_patches, head_dim), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature values must be finite")
        h, w = self.grid
        if h * w != arr.shape[1]:
            raise ValueError(f"grid {self.grid} does not cover {arr.shape[1]} patches")
        object.__setattr__(self, "values", arr)

    @property
    def n_heads(self) -> int:
        return self.values.shape[0]

    @property
    def n_patches(self) -> int:
        return self.values.shape[1]

    @property
    def head_dim(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class SimilarityMap:
    """Patch-resolution background similarity scores in [-1, 1], shape (h, w)."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"similarity map must be non-empty 2-D, got {arr.shape}")
        object.__setattr__(self, "values", arr)

    @property
    def grid(self) -> tuple[int, int]:
        return self.values.shape


def head_entropy(attn: AttentionStack) -> np.ndarray:
    """Shannon entropy in bits of each head's sum-normalized attention row.

    0 * log 0 counts as 0, so a one-hot row has zero entropy and a uniform
    row over N patches has log2(N).
    """
    rows = attn.values
    sums = rows.sum(axis=1)
    if np.any(sums <= 0):
        raise ValueError("degenerate head: attention row does not sum to a positive value")
    p = rows / sums[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(p), 0.0)
    return -terms.sum(axis=1)


def head_weights(entropies: np.ndarray) -> np.ndarray:
    """Per-head weights -ln(E_i / sum_j E_j); lower entropy earns a higher weight.

    A single head degenerates to weight 0 (its entropy share is 1); a
    warning is emitted and downstream similarity falls back to unweighted
    features.
    """
    e = np.asarray(entropies, dtype=np.float64)
    if e.ndim != 1 or e.size == 0:
        raise ValueError(f"entropies must be a non-empty 1-D array, got shape {e.shape}")
    if np.any(e < 0):
        raise ValueError("entropies must be non-negative")
    total = e.sum()
    if total <= 0:
        raise ValueError("entropy sum must be positive")
    if e.size == 1:
        warnings.warn("single attention head: weights degenerate to zero; "
                      "similarity will use unweighted features", stacklevel=2)
        return np.zeros(1)
    with np.errstate(divide="ignore"):
        return -np.log(e / total)


def _effective_weights(weights: np.ndarray, n_heads: int) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n_heads,):
        raise ValueError(f"expected {n_heads} weights, got shape {w.shape}")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if not w.any():
        # degenerate (single-head) case: fall back to unweighted
        return np.ones(n_heads)
    return w


def background_patch_index(attn: AttentionStack, weights: np.ndarray) -> int:
    """Index of the patch with the minimum weighted attention sum over heads.

    Ties break to the lowest index.
    """
    w = _effective_weights(weights, attn.n_heads)
    sums = w @ attn.values
    return int(np.argmin(sums))


def similarity_map(features: FeatureStack, weights: np.ndarray, bg_index: int) -> SimilarityMap:
    """Cosine similarity of every patch to the background patch.

    Per-head features are scaled by their head weight, concatenated into
    one embedding per patch, L2-normalized row-wise, and dotted against
    the background patch's embedding.  A zero-norm row is treated as
    similarity 0 to all patches.
    """
    if not 0 <= bg_index < features.n_patches:
        raise ValueError(f"background index {bg_index} out of range [0, {features.n_patches})")
    w = _effective_weights(weights, features.n_heads)
    scaled = features.values * w[:, None, None]
    # (n_heads, n_patches, d) -> (n_patches, n_heads * d)
    flat = np.transpose(scaled, (1, 0, 2)).reshape(features.n_patches, -1)
    norms = np.linalg.norm(flat, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = flat / safe[:, None]
    unit[norms == 0] = 0.0
    sims = unit @ unit[bg_index]
    h, w_ = features.grid
    return SimilarityMap(sims.reshape(h, w_))


def upsample_nearest(sim: SimilarityMap, height: int, width: int) -> np.ndarray:
    """Expand the patch-resolution map to (height, width) by nearest neighbor.

    Pixel (y, x) reads patch (floor(y*h/height), floor(x*w/width)), which
    reduces to (y // K, x // K) when the image is an exact K-multiple of
    the patch grid.
    """
    h, w = sim.grid
    if height < h or width < w:
        raise ValueError(f"pixel grid {height}x{width} smaller than patch grid {h}x{w}")
    rows = (np.arange(height) * h) // height
    cols = (np.arange(width) * w) // width
    return sim.values[np.ix_(rows, cols)]


def score_masks(proposals: ProposalSet, sim: SimilarityMap) -> np.ndarray:
    """Mean background similarity over each mask's pixels.

    The patch map is upsampled to the masks' pixel grid by nearest
    neighbor first.  An empty mask scores 0.
    """
    if len(proposals) == 0:
        return np.zeros(0)
    height, width = proposals.shape
    pixel_sim = upsample_nearest(sim, height, width)
    scores = np.zeros(len(proposals))
    for i, mask in enumerate(proposals.masks):
        if mask.area:
            scores[i] = pixel_sim[mask.bits].mean()
    return scores


def filter_background(proposals: ProposalSet, scores: np.ndarray, tau: float) -> ProposalSet:
    """Drop masks whose background score strictly exceeds tau."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(proposals),):
        raise ValueError(f"expected {len(proposals)} scores, got shape {scores.shape}")
    keep = [i for i in range(len(proposals)) if scores[i] <= tau]
    return proposals.subset(keep)
