import json
import os
import stat

import numpy as np
import pytest

from zeroseg import pngio
from zeroseg.backends import (
    BridgeBackend,
    FixtureError,
    FixtureNotFoundError,
    GeneratorParams,
    PromptNotRecordedError,
    ReplayBackend,
    box_prompt_key,
    point_prompt_key,
    prompted_request_for_points,
    read_proposals,
    read_stack,
    verify_checksums,
    write_checksums,
    write_prompted,
    write_proposals,
    write_stack,
)
from zeroseg.maskset import BinaryMask, ProposalSet
from zeroseg.prompts import PointPrompt

from conftest import mask_from_rows


def make_scene(scene_dir, rng, height=8, width=8, n_heads=2, grid=(2, 2), d=3):
    """Write a minimal but complete fixture scene; returns its pieces."""
    scene_dir.mkdir(parents=True, exist_ok=True)
    rgb = rng.integers(0, 255, size=(height, width, 3)).astype(np.uint8)
    depth = rng.integers(500, 2000, size=(height, width)).astype(np.uint16)
    pngio.write_rgb(scene_dir / "rgb.png", rgb)
    pngio.write_depth(scene_dir / "depth.png", depth)
    masks = [
        BinaryMask(np.pad(np.ones((3, 3), dtype=bool), ((0, height - 3), (0, width - 3)))),
        BinaryMask(np.pad(np.ones((2, 2), dtype=bool), ((height - 2, 0), (width - 2, 0)))),
    ]
    proposals = ProposalSet(masks, [0.9, 0.8])
    params = GeneratorParams()
    write_proposals(scene_dir / "proposals.json", proposals, params, height, width)
    n_patches = grid[0] * grid[1]
    attn = rng.random((n_heads, n_patches)) + 0.01
    feat = rng.normal(size=(n_heads, n_patches, d))
    write_stack(scene_dir / "attn.bin", attn, grid)
    write_stack(scene_dir / "feat.bin", feat, grid)
    write_checksums(scene_dir)
    return rgb, depth, proposals, params, attn, feat


# ---------------------------------------------------------------------------
# params and keys

def test_generator_params_defaults_and_validation():
    p = GeneratorParams()
    assert p.box_nms_thresh == 0.5
    assert p.crop_overlap_ratio == 0.0
    assert p.min_mask_region_area == 0
    assert p.points_per_batch == 64
    assert p.stability_score_thresh == 0.95
    with pytest.raises(ValueError):
        GeneratorParams(box_nms_thresh=1.5)
    with pytest.raises(ValueError):
        GeneratorParams(points_per_batch=0)
    assert GeneratorParams.from_dict(p.to_dict()) == p


def test_point_prompt_key_is_order_independent():
    a = [PointPrompt(3, 4), PointPrompt(1, 2), PointPrompt(5, 0)]
    b = [PointPrompt(5, 0), PointPrompt(3, 4), PointPrompt(1, 2)]
    assert point_prompt_key(a) == point_prompt_key(b)
    assert point_prompt_key(a) == point_prompt_key([(3, 4), (1, 2), (5, 0)])
    assert point_prompt_key(a) != point_prompt_key([(3, 4), (1, 2)])


def test_box_key_differs_from_point_key():
    assert box_prompt_key((1, 2, 3, 4)) != point_prompt_key([(1, 2), (3, 4)])


# ---------------------------------------------------------------------------
# codecs

def test_stack_round_trip(tmp_path, rng):
    values = rng.normal(size=(3, 12, 4)).astype(np.float32)
    write_stack(tmp_path / "s.bin", values, grid=(3, 4), extra={"source": "key"})
    got, grid, header = read_stack(tmp_path / "s.bin")
    assert np.array_equal(got, values)
    assert grid == (3, 4)
    assert header["source"] == "key"


def test_stack_payload_mismatch_detected(tmp_path, rng):
    path = tmp_path / "s.bin"
    write_stack(path, rng.normal(size=(2, 4)), grid=(2, 2))
    blob = path.read_bytes()
    path.write_bytes(blob[:-4])  # truncate one float
    with pytest.raises(FixtureError, match="payload"):
        read_stack(path)


def test_proposals_round_trip(tmp_path):
    masks = [mask_from_rows(["##..", "....", "....", "...."]),
             mask_from_rows(["....", "..##", "..##", "...."])]
    proposals = ProposalSet(masks, [0.5, 0.75])
    params = GeneratorParams(stability_score_thresh=0.9)
    write_proposals(tmp_path / "p.json", proposals, params, 4, 4)
    got, got_params, (h, w) = read_proposals(tmp_path / "p.json")
    assert (h, w) == (4, 4)
    assert got_params == params
    assert got.scores == [0.5, 0.75]
    assert all(a == b for a, b in zip(got.masks, masks))


def test_prompted_round_trip(tmp_path):
    mask = mask_from_rows(["#..", "##.", "..."])
    prompts = [PointPrompt(0, 0), PointPrompt(1, 1)]
    key = point_prompt_key(prompts)
    path = write_prompted(tmp_path, key, prompted_request_for_points(prompts), mask, 0.93)
    assert path.name == f"{key}.json"
    doc = json.loads(path.read_text())
    assert doc["kind"] == "points"
    assert doc["points"] == [[0, 0], [1, 1]]
    assert doc["score"] == 0.93


# ---------------------------------------------------------------------------
# checksums

def test_checksums_detect_corruption(tmp_path, rng):
    make_scene(tmp_path / "s", rng)
    assert verify_checksums(tmp_path / "s") == []
    blob = (tmp_path / "s" / "attn.bin").read_bytes()
    (tmp_path / "s" / "attn.bin").write_bytes(blob[:-1] + bytes([blob[-1] ^ 0xFF]))
    problems = verify_checksums(tmp_path / "s")
    assert problems == ["checksum mismatch for attn.bin"]


# ---------------------------------------------------------------------------
# replay backend

def test_replay_returns_recorded_set_verbatim(tmp_path, rng):
    rgb, depth, proposals, params, attn, feat = make_scene(tmp_path / "sceneA", rng)
    backend = ReplayBackend(tmp_path)
    scene = backend.scene("sceneA")
    got1 = scene.generate_proposals(rgb, params)
    got2 = scene.generate_proposals(rgb, params)
    for a, b, c in zip(got1.masks, got2.masks, proposals.masks):
        assert a == b == c
    assert got1.scores == got2.scores == proposals.scores
    a1, f1 = scene.extract_features(rgb)
    assert np.array_equal(a1.values, np.asarray(attn, dtype=np.float32).astype(np.float64))
    assert a1.grid == (2, 2)
    assert f1.values.shape == feat.shape


def test_replay_unknown_scene(tmp_path, rng):
    make_scene(tmp_path / "sceneA", rng)
    backend = ReplayBackend(tmp_path)
    with pytest.raises(FixtureNotFoundError, match="fixture not found"):
        backend.scene("nope")


def test_replay_rejects_wrong_dims_or_params(tmp_path, rng):
    rgb, depth, proposals, params, *_ = make_scene(tmp_path / "sceneA", rng)
    scene = ReplayBackend(tmp_path).scene("sceneA")
    with pytest.raises(FixtureError, match="does not match"):
        scene.generate_proposals(rgb[:4], params)
    with pytest.raises(FixtureError, match="differ"):
        scene.generate_proposals(rgb, GeneratorParams(box_nms_thresh=0.7))


def test_replay_prompted_strict_miss(tmp_path, rng):
    rgb, *_ = make_scene(tmp_path / "sceneA", rng)
    scene = ReplayBackend(tmp_path).scene("sceneA")
    prompts = [PointPrompt(1, 1)]
    with pytest.raises(PromptNotRecordedError):
        scene.predict_with_points(rgb, prompts)
    mask = mask_from_rows(["#" * 8] + ["." * 8] * 7)
    write_prompted(tmp_path / "sceneA", point_prompt_key(prompts),
                   prompted_request_for_points(prompts), mask, 0.88)
    got, score = scene.predict_with_points(rgb, prompts)
    assert got == mask and score == 0.88
    # a nearby-but-different prompt set must still miss
    with pytest.raises(PromptNotRecordedError):
        scene.predict_with_points(rgb, [PointPrompt(1, 2)])


def test_replay_scene_ids(tmp_path, rng):
    make_scene(tmp_path / "b" / "deep", rng)
    make_scene(tmp_path / "a", rng)
    assert ReplayBackend(tmp_path).scene_ids() == ["a", "b/deep"]


# ---------------------------------------------------------------------------
# bridge backend

STUB_EXTRACT = """#!/usr/bin/env python3
import json, sys
from pathlib import Path
import numpy as np
from zeroseg import pngio
from zeroseg.backends import (GeneratorParams, write_checksums, write_proposals,
                              write_stack)
from zeroseg.maskset import BinaryMask, ProposalSet

scene = Path(sys.argv[1])
params = GeneratorParams.from_dict(json.loads((scene / "params.json").read_text()))
rgb = pngio.read_rgb(scene / "rgb.png")
h, w = rgb.shape[:2]
bits = np.zeros((h, w), dtype=bool); bits[:3, :3] = True
write_proposals(scene / "proposals.json", ProposalSet([BinaryMask(bits)], [0.7]),
                params, h, w)
rng = np.random.default_rng(0)
write_stack(scene / "attn.bin", rng.random((2, 4)) + 0.1, (2, 2))
write_stack(scene / "feat.bin", rng.normal(size=(2, 4, 3)), (2, 2))
write_checksums(scene)
"""

STUB_SERVE = """#!/usr/bin/env python3
import json, sys
from pathlib import Path
import numpy as np
from zeroseg.backends import write_prompted
from zeroseg.maskset import BinaryMask

scene = Path(sys.argv[1])
req_dir = scene / "prompt_requests"
for req in sorted(req_dir.glob("*.json")):
    doc = json.loads(req.read_text())
    bits = np.zeros((8, 8), dtype=bool)
    for x, y in doc["points"]:
        bits[y, x] = True
    write_prompted(scene, req.stem, doc, BinaryMask(bits), 0.66)
    req.unlink()
"""


def _write_script(path, text):
    path.write_text(text)
    path.chmod(path.stat().st_mode | stat.S_IXUSR)


def test_bridge_round_trip(tmp_path, rng):
    import sys
    extract = tmp_path / "stub_extract.py"
    serve = tmp_path / "stub_serve.py"
    _write_script(extract, STUB_EXTRACT)
    _write_script(serve, STUB_SERVE)

    scene_dir = tmp_path / "scenes" / "s1"
    scene_dir.mkdir(parents=True)
    rgb = rng.integers(0, 255, size=(8, 8, 3)).astype(np.uint8)
    depth = rng.integers(100, 900, size=(8, 8)).astype(np.uint16)
    pngio.write_rgb(scene_dir / "rgb.png", rgb)
    pngio.write_depth(scene_dir / "depth.png", depth)

    bridge = BridgeBackend(scene_dir, "s1",
                           extract_cmd=[sys.executable, str(extract)],
                           serve_cmd=[sys.executable, str(serve)],
                           timeout=10)
    params = GeneratorParams()
    got = bridge.generate_proposals(rgb, params)
    assert len(got) == 1 and got.scores == [0.7]

    # the written bundle replays identically through the plain replay backend
    replayed = ReplayBackend(tmp_path / "scenes").scene("s1").generate_proposals(rgb, params)
    assert replayed.masks[0] == got.masks[0]

    prompts = [PointPrompt(2, 3), PointPrompt(4, 5)]
    mask, score = bridge.predict_with_points(rgb, prompts)
    assert score == 0.66
    assert mask.bits[3, 2] and mask.bits[5, 4]
    # answered prompts replay without the server
    again = ReplayBackend(tmp_path / "scenes").scene("s1").predict_with_points(rgb, prompts)
    assert again[0] == mask


def test_bridge_without_commands_fails_cleanly(tmp_path, rng):
    scene_dir = tmp_path / "s2"
    scene_dir.mkdir()
    rgb = rng.integers(0, 255, size=(4, 4, 3)).astype(np.uint8)
    bridge = BridgeBackend(scene_dir, "s2", timeout=0.2, poll_interval=0.05)
    with pytest.raises(FixtureNotFoundError, match="no extract command"):
        bridge.generate_proposals(rgb, GeneratorParams())
