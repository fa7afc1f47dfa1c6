"""RGB-D scene loading with instance ground truth.

Three directory layouts are supported:

* ``flat``: ``<id>_rgb.png``, ``<id>_depth.png`` (16-bit, millimeters) and
  ``<id>_label.png`` (instance ids) side by side under the root.
* ``ocid``: any directory tree whose leaves contain ``rgb/``, ``depth/``
  and ``label/`` subdirectories holding same-named PNGs; the scene id is
  the leaf path plus the file stem.
* ``osd``: ``image_color/``, ``disparity/`` and ``annotation/``
  directories holding same-named PNGs.

Label images map pixel value 0 (plus any configured background/support
ids, e.g. the table label) to background; every other value becomes one
instance mask.  Scenes iterate in lexicographic id order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import pngio
from .maskset import BinaryMask, ProposalSet

LAYOUTS = ("flat", "ocid", "osd")

# label ids treated as background per layout: 0 is always background;
# ocid additionally excludes the support surface (table/floor) label 1
DEFAULT_BACKGROUND_LABELS = {
    "flat": (0,),
    "ocid": (0, 1),
    "osd": (0,),
}


class SceneLoadError(Exception):
    def __init__(self, scene_id: str, message: str):
        super().__init__(f"{scene_id}: {message}")
        self.scene_id = scene_id


@dataclass(frozen=True)
class SceneRef:
    """Paths of one scene's files; decoding happens in load_scene."""

    scene_id: str
    rgb_path: Path
    depth_path: Path
    label_path: Path


@dataclass
class Scene:
    scene_id: str
    rgb: np.ndarray
    depth: np.ndarray
    gt: ProposalSet
    gt_ids: list[int]


def scan_dataset(root: str | Path, layout: str) -> list[SceneRef]:
    """List scene references sorted by id; raises on a missing root."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root does not exist: {root}")
    if layout == "flat":
        refs = _scan_flat(root)
    elif layout == "ocid":
        refs = _scan_ocid(root)
    elif layout == "osd":
        refs = _scan_osd(root)
    else:
        raise ValueError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    return sorted(refs, key=lambda r: r.scene_id)


def _scan_flat(root: Path) -> list[SceneRef]:
    refs = []
    for rgb in root.glob("*_rgb.png"):
        scene_id = rgb.name[: -len("_rgb.png")]
        refs.append(SceneRef(scene_id, rgb,
                             root / f"{scene_id}_depth.png",
                             root / f"{scene_id}_label.png"))
    return refs


def _scan_ocid(root: Path) -> list[SceneRef]:
    refs = []
    for rgb_dir in sorted(root.rglob("rgb")):
        if not rgb_dir.is_dir():
            continue
        seq_dir = rgb_dir.parent
        rel = seq_dir.relative_to(root).as_posix()
        prefix = "" if rel == "." else rel + "/"
        for rgb in sorted(rgb_dir.glob("*.png")):
            refs.append(SceneRef(prefix + rgb.stem, rgb,
                                 seq_dir / "depth" / rgb.name,
                                 seq_dir / "label" / rgb.name))
    return refs


def _scan_osd(root: Path) -> list[SceneRef]:
    refs = []
    for rgb in (root / "image_color").glob("*.png"):
        refs.append(SceneRef(rgb.stem, rgb,
                             root / "disparity" / rgb.name,
                             root / "annotation" / rgb.name))
    return refs


def decode_label_image(labels: np.ndarray,
                       background_labels: Sequence[int]) -> tuple[ProposalSet, list[int]]:
    """Split a label image into one mask per non-background instance id.

    Returns the masks (ascending id order) and their source label ids; the
    masks are pairwise disjoint by construction.
    """
    labels = np.asarray(labels)
    excluded = set(int(b) for b in background_labels)
    ids = [int(v) for v in np.unique(labels) if int(v) not in excluded]
    masks = [BinaryMask(labels == v) for v in ids]
    return ProposalSet(masks, source="ground-truth"), ids


def encode_label_image(masks: Sequence[BinaryMask], ids: Sequence[int],
                       shape: tuple[int, int]) -> np.ndarray:
    """Rebuild a label image from instance masks (background stays 0)."""
    if len(masks) != len(ids):
        raise ValueError("masks and ids must have matching lengths")
    out = np.zeros(shape, dtype=np.int32)
    for mask, value in zip(masks, ids):
        out[mask.bits] = int(value)
    return out


def load_scene(ref: SceneRef, background_labels: Sequence[int]) -> Scene:
    """Decode one scene; raises SceneLoadError with the offending detail."""
    for path, what in ((ref.rgb_path, "rgb"), (ref.depth_path, "depth"),
                       (ref.label_path, "label")):
        if not path.is_file():
            raise SceneLoadError(ref.scene_id, f"missing {what} file {path.name}")
    try:
        rgb = pngio.read_rgb(ref.rgb_path)
        depth = pngio.read_depth(ref.depth_path)
        labels = pngio.read_label(ref.label_path)
    except (OSError, ValueError) as exc:
        raise SceneLoadError(ref.scene_id, f"decode failed: {exc}") from exc
    if rgb.shape[:2] != depth.shape or rgb.shape[:2] != labels.shape:
        raise SceneLoadError(
            ref.scene_id,
            f"dimension mismatch: rgb {rgb.shape[:2]}, depth {depth.shape}, "
            f"label {labels.shape}")
    gt, ids = decode_label_image(labels, background_labels)
    return Scene(ref.scene_id, rgb, depth, gt, ids)


def load_dataset(root: str | Path, layout: str,
                 background_labels: Sequence[int] | None = None,
                 errors: list[SceneLoadError] | None = None) -> Iterator[Scene]:
    """Yield decodable scenes in id order, collecting per-scene failures.

    A scene that fails to decode is skipped; its SceneLoadError is
    appended to ``errors`` when a list is supplied, otherwise re-raised.
    """
    if background_labels is None:
        background_labels = DEFAULT_BACKGROUND_LABELS[layout]
    for ref in scan_dataset(root, layout):
        try:
            yield load_scene(ref, background_labels)
        except SceneLoadError as exc:
            if errors is None:
                raise
            errors.append(exc)
