import numpy as np
import pytest

from zeroseg.maskset import BinaryMask, ProposalSet


def mask_from_rows(rows):
    """Build a BinaryMask from strings like '.##.' ('#' = foreground)."""
    bits = np.array([[c == "#" for c in row] for row in rows], dtype=bool)
    return BinaryMask(bits)


def random_masks(rng, n, height, width, p=0.3):
    """n random blob-ish masks on one grid (may be empty or overlapping)."""
    masks = []
    for _ in range(n):
        # random rectangle plus salt for irregular shapes
        bits = np.zeros((height, width), dtype=bool)
        y0 = rng.integers(0, height)
        x0 = rng.integers(0, width)
        y1 = rng.integers(y0, height) + 1
        x1 = rng.integers(x0, width) + 1
        bits[y0:y1, x0:x1] = True
        bits &= rng.random((height, width)) < (1 - p) + p * rng.random()
        masks.append(BinaryMask(bits))
    return masks


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def proposal_set(masks, scores=None):
    return ProposalSet(masks, scores)
