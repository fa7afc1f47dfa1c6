import json

import numpy as np
import pytest

from segextract.fixture import (
    box_prompt_key,
    normalize_params,
    point_prompt_key,
    rle_decode,
    rle_encode,
    write_prompted,
    write_proposals,
    write_stack,
)


def test_rle_round_trip():
    bits = np.zeros((4, 4), dtype=bool)
    bits[0, 0] = bits[1, :] = bits[3, 3] = True
    rle = rle_encode(bits)
    assert rle == {"height": 4, "width": 4, "runs": [[0, 1], [4, 4], [15, 1]]}
    assert np.array_equal(rle_decode(rle), bits)


def test_rle_random_round_trip():
    rng = np.random.default_rng(5)
    for _ in range(30):
        bits = rng.random((rng.integers(1, 15), rng.integers(1, 15))) < 0.4
        assert np.array_equal(rle_decode(rle_encode(bits)), bits)


def test_prompt_keys_are_frozen():
    # digests pinned against the documented derivation: sorted by (y, x),
    # packed as little-endian uint32 pairs behind a pts:/box: tag
    assert point_prompt_key([(3, 4), (1, 2), (5, 0)]) == \
        "68ae19a623327e3d6140acfbc7ef1fab6fe6b631979635ff188855a3eb0509bd"
    assert point_prompt_key([(5, 0), (3, 4), (1, 2)]) == \
        point_prompt_key([(3, 4), (1, 2), (5, 0)])
    assert box_prompt_key((1, 2, 3, 4)) == \
        "86809b2f0a613580fee868c1fc47e040d58414de3bbb6e57217ecc68111bdc1e"


def test_normalize_params():
    full = normalize_params(None)
    assert full == {
        "box_nms_thresh": 0.5,
        "crop_overlap_ratio": 0.0,
        "min_mask_region_area": 0,
        "points_per_batch": 64,
        "stability_score_thresh": 0.95,
    }
    tweaked = normalize_params({"stability_score_thresh": 0.9})
    assert tweaked["stability_score_thresh"] == 0.9
    assert tweaked["box_nms_thresh"] == 0.5
    with pytest.raises(ValueError, match="unknown generator parameter"):
        normalize_params({"warp_factor": 9})


def test_stack_file_layout(tmp_path):
    values = np.arange(24, dtype=np.float32).reshape(2, 12)
    write_stack(tmp_path / "s.bin", values, grid=(3, 4), extra={"source": "key"})
    blob = (tmp_path / "s.bin").read_bytes()
    header_line, payload = blob.split(b"\n", 1)
    header = json.loads(header_line)
    assert header == {"dtype": "float32", "grid": [3, 4],
                      "shape": [2, 12], "source": "key"}
    assert len(payload) == 24 * 4
    assert np.array_equal(np.frombuffer(payload, "<f4").reshape(2, 12), values)


def test_proposals_document_shape(tmp_path):
    bits = np.zeros((6, 6), dtype=bool)
    bits[2:4, 2:4] = True
    write_proposals(tmp_path / "p.json", [bits], [0.5], None, 6, 6)
    doc = json.loads((tmp_path / "p.json").read_text())
    assert doc["height"] == 6 and doc["width"] == 6
    assert doc["source"] == "generator"
    assert doc["scores"] == [0.5]
    assert doc["masks"][0]["runs"] == [[14, 2], [20, 2]]
    assert set(doc["params"]) == {"box_nms_thresh", "crop_overlap_ratio",
                                  "min_mask_region_area", "points_per_batch",
                                  "stability_score_thresh"}


def test_write_prompted_uses_canonical_key(tmp_path):
    bits = np.zeros((5, 5), dtype=bool)
    bits[1, 1] = True
    request = {"kind": "points", "points": [[2, 3], [1, 1]]}
    path = write_prompted(tmp_path, request, bits, 0.7)
    assert path.stem == point_prompt_key([(2, 3), (1, 1)])
    doc = json.loads(path.read_text())
    assert doc["score"] == 0.7 and doc["kind"] == "points"
    with pytest.raises(ValueError, match="unknown prompt kind"):
        write_prompted(tmp_path, {"kind": "sigil"}, bits, 0.5)
