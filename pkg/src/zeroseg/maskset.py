"""Binary mask algebra, proposal sets, and the mask-independence post-processing.

Masks produced by an automatic segmentation backend routinely contain
"union masks" (a mask that is really the union of several smaller ones)
and partially overlapping duplicates.  ``make_independent`` removes the
unions and then resolves the remaining overlaps so that the surviving
masks are pairwise disjoint.

The RLE codec used for persisting masks is defined here and is byte-exact:
a mask is stored as ``{"height": H, "width": W, "runs": [[start, length],
...]}`` where ``start`` is a 0-based index into the row-major flattened
pixel order, runs are sorted ascending, maximal (never adjacent or
overlapping), and ``length >= 1``.
"""

from __future__ import annotations

import itertools
from typing import Iterable, Sequence

import numpy as np


class BinaryMask:
    """H×W boolean instance mask with cached area and bounding box."""

    __slots__ = ("bits", "_area", "_bbox")

    def __init__(self, bits: np.ndarray):
        arr = np.asarray(bits)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        if arr.size == 0:
            raise ValueError("mask must be non-empty (H*W > 0)")
        arr = arr.astype(bool, copy=True)
        arr.setflags(write=False)
        self.bits = arr
        self._area = None
        self._bbox = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    @property
    def area(self) -> int:
        if self._area is None:
            self._area = int(np.count_nonzero(self.bits))
        return self._area

    @property
    def bbox(self):
        """Inclusive (x_min, y_min, x_max, y_max) of the foreground, or None if empty."""
        if self._bbox is None:
            ys, xs = np.nonzero(self.bits)
            if ys.size == 0:
                self._bbox = (None,)
            else:
                self._bbox = (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
        return None if self._bbox == (None,) else self._bbox

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.bits, other.bits))

    def __repr__(self):
        return f"BinaryMask(shape={self.shape}, area={self.area})"


def _check_same_shape(a: BinaryMask, b: BinaryMask) -> None:
    if a.shape != b.shape:
        raise ValueError(f"mask dimensions differ: {a.shape} vs {b.shape}")


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection-over-union of two same-size masks; 0.0 when both are empty."""
    _check_same_shape(a, b)
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = a.area + b.area - inter
    if union == 0:
        return 0.0
    return inter / union


def mask_to_rle(mask: BinaryMask) -> dict:
    """Encode a mask into the run-length form described in the module docstring."""
    flat = mask.bits.ravel()
    # boundaries of runs of True values
    padded = np.concatenate(([False], flat, [False]))
    changes = np.nonzero(padded[1:] != padded[:-1])[0]
    starts = changes[0::2]
    ends = changes[1::2]
    runs = [[int(s), int(e - s)] for s, e in zip(starts, ends)]
    h, w = mask.shape
    return {"height": h, "width": w, "runs": runs}


def rle_to_mask(rle: dict) -> BinaryMask:
    """Decode the RLE dict form back into a BinaryMask.

    Raises ValueError on malformed input (runs out of range, overlapping,
    unsorted, or non-positive lengths).
    """
    h = int(rle["height"])
    w = int(rle["width"])
    if h <= 0 or w <= 0:
        raise ValueError(f"invalid RLE dimensions {h}x{w}")
    flat = np.zeros(h * w, dtype=bool)
    prev_end = 0
    for item in rle["runs"]:
        start, length = int(item[0]), int(item[1])
        if length < 1:
            raise ValueError(f"RLE run length must be >= 1, got {length}")
        if start < prev_end:
            raise ValueError("RLE runs must be sorted, non-overlapping, non-adjacent")
        if start + length > h * w:
            raise ValueError("RLE run extends past end of image")
        flat[start : start + length] = True
        prev_end = start + length + 1  # +1: adjacent runs must have been merged
    return BinaryMask(flat.reshape(h, w))


class ProposalSet:
    """Ordered collection of same-size masks with per-mask confidence scores."""

    __slots__ = ("masks", "scores", "source")

    def __init__(self, masks: Iterable[BinaryMask], scores: Sequence[float] | None = None,
                 source: str = "generator"):
        self.masks = list(masks)
        if scores is None:
            self.scores = [1.0] * len(self.masks)
        else:
            self.scores = [float(s) for s in scores]
        if len(self.scores) != len(self.masks):
            raise ValueError(f"{len(self.masks)} masks but {len(self.scores)} scores")
        shapes = {m.shape for m in self.masks}
        if len(shapes) > 1:
            raise ValueError(f"masks must share one shape, got {sorted(shapes)}")
        self.source = source

    @property
    def shape(self) -> tuple[int, int] | None:
        """Common (H, W) of the masks, or None for an empty set."""
        return self.masks[0].shape if self.masks else None

    def subset(self, indices: Sequence[int]) -> "ProposalSet":
        return ProposalSet([self.masks[i] for i in indices],
                           [self.scores[i] for i in indices], source=self.source)

    def __len__(self) -> int:
        return len(self.masks)

    def __iter__(self):
        return iter(self.masks)

    def __repr__(self):
        return f"ProposalSet(n={len(self)}, source={self.source!r})"


def remove_union_masks(proposals: ProposalSet, theta: float = 0.8,
                       k_max: int = 3) -> ProposalSet:
    """Drop masks approximated by a union of 2..k_max other surviving masks.

    Masks are scanned in input order.  For mask i, candidate sets are the
    masks j != i that have not themselves been removed so far; combinations
    are tried in ascending size, each size in lexicographic index order.
    Mask i is removed as soon as some combination C satisfies
    IoU(m_i, union(C)) >= theta.  Removed masks are excluded from the
    candidate pool of every later decision.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must be in (0, 1], got {theta}")
    if k_max < 2:
        raise ValueError(f"k_max must be >= 2, got {k_max}")
    n = len(proposals)
    if n == 0:
        return proposals.subset([])

    flat = [m.bits.ravel() for m in proposals.masks]
    areas = [m.area for m in proposals.masks]
    removed: set[int] = set()

    for i in range(n):
        if i in removed:
            continue
        area_i = areas[i]
        # pairwise intersections with mask i, used for sound IoU upper bounds
        inter_i = None
        done = False
        for k in range(2, k_max + 1):
            candidates = [j for j in range(n) if j != i and j not in removed]
            if len(candidates) < k:
                break
            if inter_i is None:
                inter_i = {
                    j: int(np.count_nonzero(flat[i] & flat[j]))
                    for j in range(n) if j != i
                }
            for combo in itertools.combinations(candidates, k):
                # IoU <= min(|m_i|, sum of pairwise intersections)
                #        / (|m_i| + max_j |m_j \ m_i|); skip combos that
                # cannot reach theta without touching the pixel data.
                ub_inter = min(area_i, sum(inter_i[j] for j in combo))
                lb_union = area_i + max(areas[j] - inter_i[j] for j in combo)
                if lb_union > 0 and ub_inter / lb_union < theta:
                    continue
                union = np.zeros_like(flat[i])
                for j in combo:
                    union |= flat[j]
                inter = int(np.count_nonzero(flat[i] & union))
                denom = area_i + int(np.count_nonzero(union)) - inter
                value = inter / denom if denom else 0.0
                if value >= theta:
                    removed.add(i)
                    done = True
                    break
            if done:
                break

    return proposals.subset([i for i in range(n) if i not in removed])


def resolve_overlaps(proposals: ProposalSet) -> ProposalSet:
    """Make masks pairwise disjoint by subtracting previously accepted ones.

    Masks are processed smallest-area first (ties by input index); each
    output mask is the input minus the union of already-accepted outputs,
    and empty results are dropped.  Scores follow their source mask.
    """
    n = len(proposals)
    if n == 0:
        return proposals.subset([])
    order = sorted(range(n), key=lambda i: (proposals.masks[i].area, i))
    return _subtract_in_order(proposals, order)


def _subtract_in_order(proposals: ProposalSet, order: Sequence[int]) -> ProposalSet:
    shape = proposals.shape
    covered = np.zeros(shape, dtype=bool)
    masks: list[BinaryMask] = []
    scores: list[float] = []
    for i in order:
        remainder = proposals.masks[i].bits & ~covered
        if remainder.any():
            masks.append(BinaryMask(remainder))
            scores.append(proposals.scores[i])
            covered |= remainder
    return ProposalSet(masks, scores, source=proposals.source)


def make_independent(proposals: ProposalSet, theta: float = 0.8,
                     k_max: int = 3) -> ProposalSet:
    """Union-mask removal followed by overlap resolution; output is disjoint."""
    return resolve_overlaps(remove_union_masks(proposals, theta, k_max))


def size_filter(proposals: ProposalSet, min_area: int = 500,
                max_frac: float = 0.8) -> ProposalSet:
    """Drop masks smaller than min_area pixels or covering more than
    max_frac of the image.  Both boundaries are inclusive on the keep side.
    """
    if min_area < 0:
        raise ValueError(f"min_area must be >= 0, got {min_area}")
    if not 0.0 < max_frac <= 1.0:
        raise ValueError(f"max_frac must be in (0, 1], got {max_frac}")
    if len(proposals) == 0:
        return proposals.subset([])
    h, w = proposals.shape
    limit = max_frac * h * w
    keep = [i for i, m in enumerate(proposals.masks)
            if m.area >= min_area and m.area <= limit]
    return proposals.subset(keep)
