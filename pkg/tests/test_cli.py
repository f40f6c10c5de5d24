import json

import pytest

from methylhub import cli
from methylhub.pipeline import REPORT_FILES

SMALL = {
    "synth": {"n_probes": 400, "n_cases": 30, "n_controls": 26, "genes_per_module": 6},
    "train": {"epochs": 15, "hidden_sizes": [[8]], "learning_rate": [0.01], "outer_folds": 3,
              "inner_folds": 2, "feature_prefilter_k": 200},
    "k_hubs": 10,
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_stage_by_stage(tmp_path, config, capsys):
    out = tmp_path / "out"
    for cmd in ("synth", "qc", "stats", "train", "attribute", "hubs"):
        assert run(cmd, "--config", config, "--seed", 2, "--out", out) == 0, cmd
    for name in ("mvalues.tsv", "qc_report.json", "diffmeth.tsv", "cv_result.json", "roc_points.tsv",
                 "attribution.json", "probes_top.tsv", "genes_top.tsv", "hubs.tsv", "modules.tsv",
                 "stability.json", "weights_fold0.json"):
        assert (out / name).is_file(), name
    header = (out / "genes_top.tsv").read_text().splitlines()[0]
    assert header == "rank\tgene\tprobe_count\tscore\tagg_mode"
    assert (out / "hubs.tsv").read_text().startswith("rank\tgene\thub_score\tmodule_count\n")


def test_pipeline_report(tmp_path, config):
    out = tmp_path / "run"
    assert run("pipeline", "--config", config, "--seed", 3, "--out", out) == 0
    for name in REPORT_FILES:
        assert (out / name).is_file(), name
    report = json.loads((out / "report.json").read_text())
    assert set(report["tier1"]) >= {"mean_auroc", "pooled_auroc", "top_probes", "top_genes"}
    assert len(report["tier1"]["top_probes"]) == 50
    assert len(report["tier2"]["top_hubs"]) == 10
    axis = report["axis"]
    assert axis["pearson"]["ci_low"] <= axis["pearson"]["r"] <= axis["pearson"]["ci_high"]
    assert "synthetic_truth" in report


def test_missing_annotation_is_an_ingest_error(tmp_path, capsys):
    run("synth", "--out", tmp_path / "d", "--config", _write(tmp_path, SMALL))
    cfg = {"inputs": {"beta": "d/beta.tsv", "annotation": "d/nowhere.tsv",
                      "samples": "d/samples.tsv", "modules": "d/modules.gmt"},
           "train": SMALL["train"]}
    code = run("pipeline", "--config", _write(tmp_path, cfg, "bad.json"), "--out", tmp_path / "o")
    err = capsys.readouterr().err
    assert code != 0
    assert "[INGEST] FILE_NOT_FOUND" in err


def test_unknown_config_key_is_reported(tmp_path, capsys):
    code = run("pipeline", "--config", _write(tmp_path, {"synth": {"n_probez": 3}}), "--out", tmp_path / "o")
    assert code != 0
    assert "error:" in capsys.readouterr().err


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path
