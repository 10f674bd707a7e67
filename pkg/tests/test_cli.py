import json

import numpy as np
import pytest
from PIL import Image

from retinahemo.cli import main, parse_float_grid, parse_int_grid
from retinahemo.pipeline import PipelineConfig, write_synth_cohort

FAST = ["--k-grid", "2,3", "--lambda-grid", "0.1,10"]


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    d = tmp_path_factory.mktemp("cohort")
    write_synth_cohort(d / "data", n_per_class=3, seed=5, depth_range=(1, 3))
    cfg = {
        "masks": "data",
        "labels": "data/labels.csv",
        "output": "out",
        "group_scenarios": {"-1": "sc1", "1": "sc3"},
        "k_grid": [2, 3],
        "lambda_grid": [0.1, 10.0],
        "n_init": 5,
        "overlay_fields": ["P", "WSS"],
    }
    (d / "cfg.json").write_text(json.dumps(cfg))
    return d


def test_grid_parsers():
    assert parse_int_grid("2:5") == [2, 3, 4, 5]
    assert parse_int_grid("2,7") == [2, 7]
    assert parse_float_grid("1e-3,10") == [1e-3, 10.0]


def test_run_produces_all_artifacts_and_is_deterministic(cohort):
    assert main(["run", "--config", str(cohort / "cfg.json")]) == 0
    out = cohort / "out"
    ids = sorted(p.stem for p in out.glob("graphs/*.json"))
    assert len(ids) == 6
    for sid in ids:
        assert (out / "solutions" / f"{sid}.csv").is_file()
        assert (out / "features" / f"{sid}.csv").is_file()
        assert (out / "overlays" / f"{sid}_WSS.png").is_file()
    metrics = json.loads((out / "metrics.json").read_text())
    assert 0.0 <= metrics["auc"] <= 1.0 and len(metrics["folds"]) == 6
    analysis = json.loads((out / "analysis.json").read_text())
    assert analysis["per_patient"]["all"]["n"] == 6
    first = {p: (out / p).read_bytes() for p in ("metrics.json", "model.json", "analysis.json")}
    assert main(["run", "--config", str(cohort / "cfg.json"), "--jobs", "2"]) == 0
    for p, data in first.items():
        assert (out / p).read_bytes() == data, p
    assert not (out / "errors.json").exists()


def test_stages_compose_on_files(cohort, tmp_path):
    data = cohort / "data"
    g, s, f = tmp_path / "g.json", tmp_path / "s.csv", tmp_path / "f.csv"
    assert main(["extract-graph", "--mask", str(data / "synth000.png"), "--od", str(data / "synth000.od.json"),
                 "--out", str(g)]) == 0
    assert main(["simulate", "--graph", str(g), "--out", str(s), "--scenario", "sc1", "--qt", "33"]) == 0
    summary = json.loads((tmp_path / "s.summary.json").read_text())
    assert summary["scenario"]["QT"] == 33.0 and summary["residual"] <= 1e-10
    assert main(["featurize", "--solution", str(s), "--graph", str(g), "--out", str(f)]) == 0
    png = tmp_path / "o.png"
    assert main(["render", "--mask", str(data / "synth000.png"), "--solution", str(s), "--field", "Re",
                 "--out", str(png)]) == 0
    assert Image.open(png).size[::-1] == np.asarray(Image.open(data / "synth000.png")).shape[:2]


def test_evaluate_and_analyze_on_solution_directory(cohort, tmp_path):
    sol_dir = cohort / "out" / "solutions"
    if not sol_dir.is_dir():
        main(["run", "--config", str(cohort / "cfg.json")])
    labels = str(cohort / "data" / "labels.csv")
    m = tmp_path / "m.json"
    assert main(["evaluate", "--tables", str(sol_dir), "--labels", labels, "--out", str(m),
                 "--model", str(tmp_path / "model.json"), "--seed", "3"] + FAST) == 0
    assert json.loads(m.read_text())["seed"] == 3
    assert main(["analyze", "--tables", str(sol_dir), "--labels", labels, "--out", str(tmp_path / "a")]) == 0
    assert (tmp_path / "a" / "plot_segments.csv").is_file()
    assert (tmp_path / "a" / "plot_fits.csv").is_file()


def test_failures_are_collected_with_nonzero_exit(cohort, tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    for p in (cohort / "data").glob("synth00[0-5]*"):
        (data / p.name).write_bytes(p.read_bytes())
    (data / "labels.csv").write_bytes((cohort / "data" / "labels.csv").read_bytes())
    # a mask whose only vessel lies inside the optic disc
    Image.fromarray(np.pad(np.full((5, 5), 255, np.uint8), 20)).save(data / "broken.png")
    (data / "broken.od.json").write_text(json.dumps({"center": [22, 22], "axes": [15, 15], "angle": 0}))
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"masks": "data", "labels": "data/labels.csv", "output": "out",
                               "k_grid": [2], "lambda_grid": [1.0], "n_init": 3}))
    assert main(["run", "--config", str(cfg)]) == 1
    errors = json.loads((tmp_path / "out" / "errors.json").read_text())
    assert [e["subject_id"] for e in errors] == ["broken"]
    assert errors[0]["stage"] == "extract-graph"
    assert (tmp_path / "out" / "metrics.json").is_file()


def test_data_directory_from_environment(cohort, monkeypatch):
    monkeypatch.setenv("RETINAHEMO_DATA", str(cohort / "data"))
    cfg = PipelineConfig()
    cfg.validate()
    assert cfg.masks == str(cohort / "data")
    monkeypatch.delenv("RETINAHEMO_DATA")
    with pytest.raises(ValueError):
        PipelineConfig().validate()


def test_bad_inputs_exit_with_error(tmp_path, capsys):
    assert main(["simulate", "--graph", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x.csv")]) == 2
    assert "error" in capsys.readouterr().err
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"masks": str(tmp_path), "scenario": "sc9"}))
    assert main(["run", "--config", str(cfg)]) == 2
