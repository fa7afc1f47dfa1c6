"""Writers for the replayable fixture-bundle format.

One directory per scene::

    rgb.png, depth.png, proposals.json, attn.bin, feat.bin,
    checksums.json, prompted/<key>.json

Formats are byte-exact so bundles interoperate with the consumer
pipeline's strict replay backend and validator:

* masks: ``{"height": H, "width": W, "runs": [[start, length], ...]}``
  over row-major pixel order, runs sorted, maximal, 0-based;
* binary stacks: one JSON header line (``shape``, ``dtype`` = "float32",
  ``grid`` = [rows, cols]) then the raw little-endian float32 payload;
* prompt keys: sha256 over ``pts:``/``box:`` plus the sorted prompt
  coordinates packed as little-endian uint32 pairs;
* JSON files: sorted keys, indent 2, trailing newline.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

CORE_FILES = ("rgb.png", "depth.png", "proposals.json", "attn.bin", "feat.bin")

DEFAULT_GENERATOR_PARAMS = {
    "box_nms_thresh": 0.5,
    "crop_overlap_ratio": 0.0,
    "min_mask_region_area": 0,
    "points_per_batch": 64,
    "stability_score_thresh": 0.95,
}


def normalize_params(params: dict | None) -> dict:
    """Fill in defaults and reject unknown keys; the echo must match the
    consumer's generator-parameter schema exactly."""
    merged = dict(DEFAULT_GENERATOR_PARAMS)
    for key, value in (params or {}).items():
        if key not in DEFAULT_GENERATOR_PARAMS:
            raise ValueError(f"unknown generator parameter {key!r}")
        merged[key] = type(DEFAULT_GENERATOR_PARAMS[key])(value)
    return merged


# ---------------------------------------------------------------------------
# masks

def rle_encode(bits: np.ndarray) -> dict:
    bits = np.asarray(bits, dtype=bool)
    if bits.ndim != 2 or bits.size == 0:
        raise ValueError(f"mask must be a non-empty 2-D array, got {bits.shape}")
    flat = bits.ravel()
    padded = np.concatenate(([False], flat, [False]))
    changes = np.nonzero(padded[1:] != padded[:-1])[0]
    runs = [[int(s), int(e - s)] for s, e in zip(changes[0::2], changes[1::2])]
    return {"height": bits.shape[0], "width": bits.shape[1], "runs": runs}


def rle_decode(rle: dict) -> np.ndarray:
    h, w = int(rle["height"]), int(rle["width"])
    flat = np.zeros(h * w, dtype=bool)
    for start, length in rle["runs"]:
        flat[int(start) : int(start) + int(length)] = True
    return flat.reshape(h, w)


# ---------------------------------------------------------------------------
# prompt keys

def point_prompt_key(points: Sequence[tuple[int, int]]) -> str:
    pairs = sorted(((int(x), int(y)) for x, y in points), key=lambda q: (q[1], q[0]))
    blob = b"pts:" + b"".join(struct.pack("<II", x, y) for x, y in pairs)
    return hashlib.sha256(blob).hexdigest()


def box_prompt_key(box: Sequence[int]) -> str:
    blob = b"box:" + struct.pack("<IIII", *(int(v) for v in box))
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# file writers (each atomic: temp + rename)

def atomic_write_bytes(path: Path, blob: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def write_json(path: Path, doc: dict) -> None:
    atomic_write_bytes(path, (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode())


def write_image_rgb(path: Path, image: np.ndarray) -> None:
    import io

    arr = np.asarray(image, dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def write_image_depth(path: Path, depth: np.ndarray) -> None:
    import io

    buf = io.BytesIO()
    Image.fromarray(np.asarray(depth).astype(np.uint16)).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def write_stack(path: Path, values: np.ndarray, grid: tuple[int, int],
                extra: dict | None = None) -> None:
    arr = np.ascontiguousarray(values, dtype="<f4")
    header = {"dtype": "float32", "shape": list(arr.shape),
              "grid": [int(grid[0]), int(grid[1])]}
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True).encode("ascii") + b"\n" + arr.tobytes()
    atomic_write_bytes(path, blob)


def write_proposals(path: Path, masks: Sequence[np.ndarray], scores: Sequence[float],
                    params: dict, height: int, width: int) -> None:
    doc = {
        "height": int(height),
        "width": int(width),
        "params": normalize_params(params),
        "source": "generator",
        "masks": [rle_encode(m) for m in masks],
        "scores": [float(s) for s in scores],
    }
    write_json(path, doc)


def write_checksums(scene_dir: Path) -> None:
    digests = {name: hashlib.sha256((scene_dir / name).read_bytes()).hexdigest()
               for name in CORE_FILES}
    write_json(scene_dir / "checksums.json", {"files": digests})


def write_prompted(scene_dir: Path, request: dict, mask: np.ndarray, score: float) -> Path:
    """Write a prompted prediction under its canonical key (derived from the
    request content, never trusted from a filename)."""
    if request.get("kind") == "points":
        key = point_prompt_key([tuple(p) for p in request["points"]])
    elif request.get("kind") == "box":
        key = box_prompt_key(request["box"])
    else:
        raise ValueError(f"unknown prompt kind {request.get('kind')!r}")
    out_dir = scene_dir / "prompted"
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = dict(request)
    doc["mask"] = rle_encode(mask)
    doc["score"] = float(score)
    path = out_dir / f"{key}.json"
    write_json(path, doc)
    return path


# ---------------------------------------------------------------------------
# image readers

def read_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def read_depth(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("I;16", "I", "L"):
            raise ValueError(f"depth image must be single-channel, got mode {im.mode!r}")
        arr = np.asarray(im)
    return arr.astype(np.uint16)
