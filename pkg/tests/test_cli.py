import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from zeroseg import pngio
from zeroseg.cli import main
from zeroseg.datasets import load_dataset
from zeroseg.maskset import mask_to_rle

DATA = Path(__file__).parent / "data"
DATASET = DATA / "dataset"
FIXTURES = DATA / "fixtures"


def run_cli(*argv):
    return main([str(a) for a in argv])


def test_run_and_eval_bundled_fixtures(tmp_path, capsys):
    out = tmp_path / "results"
    assert run_cli("run", DATASET, "--layout", "flat",
                   "--backend", f"replay:{FIXTURES}", "--out", out) == 0
    for scene in ("allbg", "boxes", "sparse", "stack"):
        assert (out / scene / "result.json").is_file()
        assert (out / scene / "timings.json").is_file()
    assert run_cli("eval", DATASET, out, "--layout", "flat") == 0
    report = json.loads((out / "report.json").read_text())
    assert report["aggregate"]["overlap"]["precision"] == pytest.approx(0.75)
    assert report["aggregate"]["f_at_75"] == pytest.approx(75.0)
    assert len(report["scenes"]) == 4
    text = capsys.readouterr().out
    assert "Overlap" in text and "Boundary" in text


def test_eval_identity_predictions_are_perfect(tmp_path, capsys):
    results = tmp_path / "results"
    for scene in load_dataset(DATASET, "flat"):
        scene_dir = results / scene.scene_id
        scene_dir.mkdir(parents=True)
        doc = {
            "scene": scene.scene_id,
            "height": scene.rgb.shape[0],
            "width": scene.rgb.shape[1],
            "masks": [mask_to_rle(m) for m in scene.gt.masks],
            "scores": [1.0] * len(scene.gt),
        }
        (scene_dir / "result.json").write_text(json.dumps(doc))
    assert run_cli("eval", DATASET, results, "--layout", "flat") == 0
    report = json.loads((results / "report.json").read_text())
    agg = report["aggregate"]
    assert agg["overlap"] == {"precision": 1.0, "recall": 1.0, "f_measure": 1.0}
    assert agg["boundary"] == {"precision": 1.0, "recall": 1.0, "f_measure": 1.0}
    assert agg["f_at_75"] == 100.0


def test_eval_missing_results_strict_and_lenient(tmp_path):
    results = tmp_path / "results"
    results.mkdir()
    assert run_cli("eval", DATASET, results, "--layout", "flat") == 1
    assert run_cli("eval", DATASET, results, "--layout", "flat",
                   "--allow-missing") == 0
    report = json.loads((results / "report.json").read_text())
    assert report["aggregate"]["overlap"]["recall"] == 0.0


def test_run_stops_on_failure_without_keep_going(tmp_path):
    broken = tmp_path / "dataset"
    shutil.copytree(DATASET, broken)
    (broken / "allbg_depth.png").unlink()  # first scene in id order breaks
    out = tmp_path / "results"
    assert run_cli("run", broken, "--layout", "flat",
                   "--backend", f"replay:{FIXTURES}", "--out", out) == 1
    # sequential mode stops at the first failure
    assert not (out / "boxes" / "result.json").exists()
    out2 = tmp_path / "results2"
    assert run_cli("run", broken, "--layout", "flat",
                   "--backend", f"replay:{FIXTURES}", "--out", out2,
                   "--keep-going") == 0
    assert (out2 / "boxes" / "result.json").is_file()
    assert not (out2 / "allbg" / "result.json").exists()


def test_bad_invocation_exit_codes(tmp_path):
    assert run_cli("run", DATASET, "--layout", "flat",
                   "--backend", "warp-drive", "--out", tmp_path / "x") == 2
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("mystery_knob = 7\n")
    assert run_cli("run", DATASET, "--layout", "flat",
                   "--backend", f"replay:{FIXTURES}",
                   "--config", cfg, "--out", tmp_path / "y") == 2
    with pytest.raises(SystemExit) as exc:
        run_cli("definitely-not-a-command")
    assert exc.value.code == 2


def test_fixture_validate_bundled_and_corrupted(tmp_path, capsys):
    assert run_cli("fixture-validate", FIXTURES) == 0
    assert capsys.readouterr().out.count("OK") == 4
    corrupt = tmp_path / "fixtures"
    shutil.copytree(FIXTURES, corrupt)
    blob = (corrupt / "boxes" / "feat.bin").read_bytes()
    (corrupt / "boxes" / "feat.bin").write_bytes(blob[:-8])
    assert run_cli("fixture-validate", corrupt) == 1
    out = capsys.readouterr().out
    assert "FAIL boxes" in out
    assert run_cli("fixture-validate", tmp_path / "empty") == 2


def test_viz_writes_overlay_and_sim(tmp_path):
    out = tmp_path / "results"
    assert run_cli("run", DATASET, "--layout", "flat",
                   "--backend", f"replay:{FIXTURES}", "--out", out,
                   "--save-stages") == 0
    overlay = tmp_path / "viz" / "boxes.png"
    assert run_cli("viz", out / "boxes" / "result.json",
                   "--rgb", DATASET / "boxes_rgb.png",
                   "--out", overlay,
                   "--sim", out / "boxes" / "stages" / "sim.bin") == 0
    img = pngio.read_rgb(overlay)
    base = pngio.read_rgb(DATASET / "boxes_rgb.png")
    assert img.shape == base.shape
    assert not np.array_equal(img, base)  # masks were drawn
    assert (overlay.with_suffix(".sim.png")).is_file()


def test_save_stages_artifacts(tmp_path):
    out = tmp_path / "results"
    assert run_cli("run", DATASET, "--layout", "flat",
                   "--backend", f"replay:{FIXTURES}", "--out", out,
                   "--save-stages") == 0
    stages = out / "stack" / "stages"
    for name in ("raw.json", "independent.json", "size_filtered.json",
                 "objects.json", "refined.json", "sim.bin", "weights.json"):
        assert (stages / name).is_file()
    raw = json.loads((stages / "raw.json").read_text())
    assert len(raw["masks"]) == 5


def test_ablate_weighting_changes_sparse_scene(tmp_path):
    out_on = tmp_path / "on"
    out_off = tmp_path / "off"
    assert run_cli("ablate-weighting", DATASET, "--layout", "flat",
                   "--backend", f"replay:{FIXTURES}", "--out", out_on,
                   "--mode", "on") == 0
    assert run_cli("ablate-weighting", DATASET, "--layout", "flat",
                   "--backend", f"replay:{FIXTURES}", "--out", out_off,
                   "--mode", "off") == 0
    on = json.loads((out_on / "sparse" / "result.json").read_text())
    off = json.loads((out_off / "sparse" / "result.json").read_text())
    assert on["stage_counts"]["final"] == 1
    assert off["stage_counts"]["final"] == 0  # object dropped without weighting
    report_on = json.loads((out_on / "report.json").read_text())
    report_off = json.loads((out_off / "report.json").read_text())
    assert report_on["aggregate"]["overlap"]["recall"] > \
        report_off["aggregate"]["overlap"]["recall"]


@pytest.mark.parametrize("mode", ["cluster", "random", "boxes"])
def test_ablate_prompts_modes_run(tmp_path, mode):
    out = tmp_path / mode
    assert run_cli("ablate-prompts", DATASET, "--layout", "flat",
                   "--backend", f"replay:{FIXTURES}", "--out", out,
                   "--mode", mode) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["label"] == f"prompts={mode}"
    assert report["aggregate"]["overlap"]["f_measure"] == pytest.approx(0.75)


def test_sweep_tau_writes_table(tmp_path):
    out = tmp_path / "sweep"
    assert run_cli("sweep-tau", DATASET, "--layout", "flat",
                   "--backend", f"replay:{FIXTURES}", "--out", out,
                   "--taus", "0.3,0.6") == 0
    lines = (out / "sweep.tsv").read_text().strip().splitlines()
    assert lines[0].split("\t")[0] == "tau"
    assert len(lines) == 3
    assert (out / "tau_0.3000" / "report.json").is_file()
    assert (out / "tau_0.6000" / "report.json").is_file()
