"""Segmentation/descriptor backends and the on-disk fixture format.

The pipeline talks to its two foundation models through a narrow
interface; this module provides two interchangeable implementations:

* ``ReplayBackend`` deterministically replays model outputs recorded in a
  fixture directory, enabling model-free tests and runs.
* ``BridgeBackend`` delegates to an external extractor process via
  file-based requests in the same fixture directory.

Fixture directory layout, one directory per scene::

    <root>/<scene_id>/
        rgb.png           8-bit RGB scene image
        depth.png         16-bit grayscale depth, millimeters
        proposals.json    generator output: RLE masks, scores, params echo
        attn.bin          per-head CLS-to-patch attention
        feat.bin          per-head patch features
        checksums.json    sha256 of the five files above
        prompted/<key>.json   recorded prompted predictions

``attn.bin``/``feat.bin`` are a single JSON header line (``shape``,
``dtype`` = "float32", ``grid`` = [rows, cols] of the patch layout)
terminated by a newline, followed by the raw little-endian float32
payload in row-major order.  ``prompted`` files are keyed by the
canonical prompt hash (see ``point_prompt_key`` / ``box_prompt_key``);
replay lookups are strict, with no nearest-match fallback.
"""

from __future__ import annotations

import hashlib
import json
import struct
import subprocess
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import pngio
from .attnfilter import AttentionStack, FeatureStack
from .maskset import BinaryMask, ProposalSet, mask_to_rle, rle_to_mask
from .prompts import PointPrompt

CORE_FILES = ("rgb.png", "depth.png", "proposals.json", "attn.bin", "feat.bin")


class FixtureError(RuntimeError):
    """Base class for fixture/replay failures."""


class FixtureNotFoundError(FixtureError):
    pass


class PromptNotRecordedError(FixtureError):
    pass


@dataclass(frozen=True)
class GeneratorParams:
    """Automatic-mask-generator settings echoed into every fixture."""

    box_nms_thresh: float = 0.5
    crop_overlap_ratio: float = 0.0
    min_mask_region_area: int = 0
    points_per_batch: int = 64
    stability_score_thresh: float = 0.95

    def __post_init__(self):
        for name in ("box_nms_thresh", "crop_overlap_ratio", "stability_score_thresh"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.min_mask_region_area < 0 or self.points_per_batch < 1:
            raise ValueError("min_mask_region_area must be >= 0 and points_per_batch >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorParams":
        return cls(**d)


# ---------------------------------------------------------------------------
# canonical prompt keys

def point_prompt_key(points: Sequence[PointPrompt] | Sequence[tuple[int, int]]) -> str:
    """Canonical hash of a point-prompt set: order-independent, byte-exact.

    Points are sorted by (y, x) and packed as consecutive little-endian
    uint32 pairs (x, y) behind a ``pts:`` tag; the key is the sha256 hex
    digest.
    """
    pairs = []
    for p in points:
        if isinstance(p, PointPrompt):
            pairs.append((int(p.x), int(p.y)))
        else:
            pairs.append((int(p[0]), int(p[1])))
    pairs.sort(key=lambda q: (q[1], q[0]))
    blob = b"pts:" + b"".join(struct.pack("<II", x, y) for x, y in pairs)
    return hashlib.sha256(blob).hexdigest()


def box_prompt_key(box: tuple[int, int, int, int]) -> str:
    """Canonical hash of an (x0, y0, x1, y1) box prompt."""
    x0, y0, x1, y1 = (int(v) for v in box)
    blob = b"box:" + struct.pack("<IIII", x0, y0, x1, y1)
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# binary stack codec

def write_stack(path: str | Path, values: np.ndarray, grid: tuple[int, int],
                extra: dict | None = None) -> None:
    """Write a float array with a one-line JSON header (shape/dtype/grid)."""
    arr = np.ascontiguousarray(values, dtype="<f4")
    header = {"dtype": "float32", "shape": list(arr.shape), "grid": [int(grid[0]), int(grid[1])]}
    if extra:
        header.update(extra)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        f.write(arr.tobytes())


def read_stack(path: str | Path) -> tuple[np.ndarray, tuple[int, int], dict]:
    """Read a header+payload stack file; checks payload size exactly."""
    with open(path, "rb") as f:
        header_line = f.readline()
        payload = f.read()
    header = json.loads(header_line.decode("ascii"))
    if header.get("dtype") != "float32":
        raise FixtureError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    shape = tuple(int(s) for s in header["shape"])
    expected = int(np.prod(shape)) * 4
    if len(payload) != expected:
        raise FixtureError(f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    values = np.frombuffer(payload, dtype="<f4").reshape(shape)
    grid = tuple(int(g) for g in header["grid"])
    return values, grid, header


# ---------------------------------------------------------------------------
# proposals codec

def write_proposals(path: str | Path, proposals: ProposalSet,
                    params: GeneratorParams, height: int, width: int) -> None:
    doc = {
        "height": int(height),
        "width": int(width),
        "params": params.to_dict(),
        "source": proposals.source,
        "masks": [mask_to_rle(m) for m in proposals.masks],
        "scores": list(proposals.scores),
    }
    atomic_write_text(Path(path), json.dumps(doc, sort_keys=True, indent=2) + "\n")


def read_proposals(path: str | Path) -> tuple[ProposalSet, GeneratorParams, tuple[int, int]]:
    doc = json.loads(Path(path).read_text())
    height, width = int(doc["height"]), int(doc["width"])
    masks = [rle_to_mask(r) for r in doc["masks"]]
    for m in masks:
        if m.shape != (height, width):
            raise FixtureError(f"{path}: mask shape {m.shape} != declared {(height, width)}")
    proposals = ProposalSet(masks, doc["scores"], source=doc.get("source", "generator"))
    return proposals, GeneratorParams.from_dict(doc["params"]), (height, width)


def atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def atomic_write_bytes(path: Path, blob: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def write_checksums(scene_dir: str | Path) -> None:
    """Record sha256 digests of the core fixture files."""
    scene_dir = Path(scene_dir)
    digests = {}
    for name in CORE_FILES:
        digests[name] = hashlib.sha256((scene_dir / name).read_bytes()).hexdigest()
    atomic_write_text(scene_dir / "checksums.json",
                       json.dumps({"files": digests}, sort_keys=True, indent=2) + "\n")


def verify_checksums(scene_dir: str | Path) -> list[str]:
    """Return a list of checksum problems (empty when everything matches)."""
    scene_dir = Path(scene_dir)
    problems = []
    path = scene_dir / "checksums.json"
    if not path.is_file():
        return [f"missing {path.name}"]
    recorded = json.loads(path.read_text()).get("files", {})
    for name in CORE_FILES:
        target = scene_dir / name
        if not target.is_file():
            problems.append(f"missing {name}")
            continue
        actual = hashlib.sha256(target.read_bytes()).hexdigest()
        if recorded.get(name) != actual:
            problems.append(f"checksum mismatch for {name}")
    return problems


# ---------------------------------------------------------------------------
# prompted-prediction codec

def write_prompted(scene_dir: str | Path, key: str, request: dict,
                   mask: BinaryMask, score: float) -> Path:
    out_dir = Path(scene_dir) / "prompted"
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = dict(request)
    doc["mask"] = mask_to_rle(mask)
    doc["score"] = float(score)
    path = out_dir / f"{key}.json"
    atomic_write_text(path, json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return path


def read_prompted(path: str | Path) -> tuple[BinaryMask, float, dict]:
    doc = json.loads(Path(path).read_text())
    return rle_to_mask(doc["mask"]), float(doc["score"]), doc


def prompted_request_for_points(points: Sequence[PointPrompt]) -> dict:
    pairs = sorted(((int(p.x), int(p.y)) for p in points), key=lambda q: (q[1], q[0]))
    return {"kind": "points", "points": [[x, y] for x, y in pairs]}


def prompted_request_for_box(box: tuple[int, int, int, int]) -> dict:
    return {"kind": "box", "box": [int(v) for v in box]}


# ---------------------------------------------------------------------------
# replay backend

class SceneReplay:
    """Backend view over one recorded scene; all lookups are strict."""

    def __init__(self, scene_dir: str | Path, scene_id: str | None = None):
        self.scene_dir = Path(scene_dir)
        self.scene_id = scene_id if scene_id is not None else self.scene_dir.name
        if not (self.scene_dir / "proposals.json").is_file():
            raise FixtureNotFoundError(f"fixture not found: {self.scene_id}")

    # -- recorded inputs ---------------------------------------------------
    def rgb(self) -> np.ndarray:
        return pngio.read_rgb(self.scene_dir / "rgb.png")

    def depth(self) -> np.ndarray:
        return pngio.read_depth(self.scene_dir / "depth.png")

    # -- backend protocol --------------------------------------------------
    def generate_proposals(self, image: np.ndarray, params: GeneratorParams) -> ProposalSet:
        proposals, recorded_params, (h, w) = read_proposals(self.scene_dir / "proposals.json")
        if image.shape[:2] != (h, w):
            raise FixtureError(
                f"{self.scene_id}: input image {image.shape[:2]} does not match "
                f"recorded proposals grid {(h, w)}")
        if params != recorded_params:
            raise FixtureError(
                f"{self.scene_id}: requested generator params {params.to_dict()} differ "
                f"from recorded {recorded_params.to_dict()}")
        return proposals

    def extract_features(self, image: np.ndarray) -> tuple[AttentionStack, FeatureStack]:
        attn_values, attn_grid, _ = read_stack(self.scene_dir / "attn.bin")
        feat_values, feat_grid, _ = read_stack(self.scene_dir / "feat.bin")
        if attn_grid != feat_grid:
            raise FixtureError(f"{self.scene_id}: attention grid {attn_grid} != "
                               f"feature grid {feat_grid}")
        return AttentionStack(attn_values, attn_grid), FeatureStack(feat_values, feat_grid)

    def predict_with_points(self, image: np.ndarray,
                            prompts: Sequence[PointPrompt]) -> tuple[BinaryMask, float]:
        key = point_prompt_key(prompts)
        return self._lookup_prompted(key)

    def predict_with_box(self, image: np.ndarray,
                         box: tuple[int, int, int, int]) -> tuple[BinaryMask, float]:
        key = box_prompt_key(box)
        return self._lookup_prompted(key)

    def _lookup_prompted(self, key: str) -> tuple[BinaryMask, float]:
        path = self.scene_dir / "prompted" / f"{key}.json"
        if not path.is_file():
            raise PromptNotRecordedError(
                f"{self.scene_id}: no recorded prediction for prompt key {key}")
        mask, score, _ = read_prompted(path)
        return mask, score


class ReplayBackend:
    """Factory of per-scene replay views rooted at a fixture directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise FixtureNotFoundError(f"fixture root does not exist: {self.root}")

    def scene(self, scene_id: str) -> SceneReplay:
        scene_dir = self.root / scene_id
        if ".." in Path(scene_id).parts:
            raise ValueError(f"scene id may not traverse upward: {scene_id}")
        if not scene_dir.is_dir():
            raise FixtureNotFoundError(f"fixture not found: {scene_id}")
        return SceneReplay(scene_dir, scene_id)

    def scene_ids(self) -> list[str]:
        found = sorted(str(p.parent.relative_to(self.root)).replace("\\", "/")
                       for p in self.root.rglob("proposals.json"))
        return found


# ---------------------------------------------------------------------------
# bridge backend

class BridgeBackend:
    """Backend that fills fixture gaps by invoking an extractor process.

    ``extract_cmd`` (a sequence of argv tokens) is run with the scene
    directory appended whenever the bundle is missing; it must create the
    fixture files.  Prompted predictions are requested by dropping
    ``prompt_requests/<key>.json`` and waiting for ``prompted/<key>.json``
    to appear; ``serve_cmd``, when configured, is invoked (scene directory
    appended) to answer outstanding requests.
    """

    def __init__(self, scene_dir: str | Path, scene_id: str | None = None,
                 extract_cmd: Sequence[str] | None = None,
                 serve_cmd: Sequence[str] | None = None,
                 timeout: float = 60.0, poll_interval: float = 0.05):
        self.scene_dir = Path(scene_dir)
        self.scene_id = scene_id if scene_id is not None else self.scene_dir.name
        self.extract_cmd = list(extract_cmd) if extract_cmd else None
        self.serve_cmd = list(serve_cmd) if serve_cmd else None
        self.timeout = timeout
        self.poll_interval = poll_interval

    def _replay(self) -> SceneReplay:
        return SceneReplay(self.scene_dir, self.scene_id)

    def _ensure_bundle(self, params: GeneratorParams) -> None:
        if (self.scene_dir / "proposals.json").is_file():
            return
        if self.extract_cmd is None:
            raise FixtureNotFoundError(
                f"{self.scene_id}: bundle missing and no extract command configured")
        self.scene_dir.mkdir(parents=True, exist_ok=True)
        atomic_write_text(self.scene_dir / "params.json",
                           json.dumps(params.to_dict(), sort_keys=True, indent=2) + "\n")
        subprocess.run(self.extract_cmd + [str(self.scene_dir)], check=True)
        if not (self.scene_dir / "proposals.json").is_file():
            raise FixtureError(f"{self.scene_id}: extract command produced no bundle")

    def generate_proposals(self, image: np.ndarray, params: GeneratorParams) -> ProposalSet:
        self._ensure_bundle(params)
        return self._replay().generate_proposals(image, params)

    def extract_features(self, image: np.ndarray) -> tuple[AttentionStack, FeatureStack]:
        return self._replay().extract_features(image)

    def predict_with_points(self, image: np.ndarray,
                            prompts: Sequence[PointPrompt]) -> tuple[BinaryMask, float]:
        key = point_prompt_key(prompts)
        self._request_prompt(key, prompted_request_for_points(prompts))
        return self._replay()._lookup_prompted(key)

    def predict_with_box(self, image: np.ndarray,
                         box: tuple[int, int, int, int]) -> tuple[BinaryMask, float]:
        key = box_prompt_key(box)
        self._request_prompt(key, prompted_request_for_box(box))
        return self._replay()._lookup_prompted(key)

    def _request_prompt(self, key: str, request: dict) -> None:
        answer = self.scene_dir / "prompted" / f"{key}.json"
        if answer.is_file():
            return
        req_dir = self.scene_dir / "prompt_requests"
        req_dir.mkdir(parents=True, exist_ok=True)
        atomic_write_text(req_dir / f"{key}.json",
                           json.dumps(request, sort_keys=True, indent=2) + "\n")
        if self.serve_cmd is not None:
            subprocess.run(self.serve_cmd + [str(self.scene_dir)], check=True)
        deadline = time.monotonic() + self.timeout
        while not answer.is_file():
            if time.monotonic() >= deadline:
                raise PromptNotRecordedError(
                    f"{self.scene_id}: prompt {key} not answered within {self.timeout}s")
            time.sleep(self.poll_interval)
