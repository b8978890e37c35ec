import json
import subprocess
import sys
from pathlib import Path

import pytest

from latefusion.cli import main

DATA = Path(__file__).parent / "data"


@pytest.fixture
def dump(tmp_path):
    out = tmp_path / "dump"
    assert main(["synth", "--out-dir", str(out), "--classes", "8", "--samples", "200",
                 "--modalities", "4", "--imbalance", "10", "--rare-threshold", "20", "--seed", "3"]) == 0
    return out


def test_synth_then_eval_and_compare(dump, tmp_path, capsys):
    rc = main(["eval", "--predictions", str(dump / "predictions.jsonl"), "--catalog", str(dump / "catalog.csv"),
               "--out-dir", str(tmp_path / "r"), "--format", "csv,markdown", "--per-class"])
    assert rc == 0
    assert (tmp_path / "r" / "report.csv").exists() and (tmp_path / "r" / "report.md").exists()
    text = (tmp_path / "r" / "report.csv").read_text()
    assert "# input predictions.jsonl sha256=" in text
    assert "\nper_class," in text
    rc = main(["compare", "--predictions", str(dump / "predictions.jsonl"), "--catalog", str(dump / "catalog.csv"),
               "--out-dir", str(tmp_path / "c"), "--format", "csv,markdown"])
    assert rc == 0
    lines = (tmp_path / "c" / "comparison.csv").read_text().splitlines()
    assert lines[1] == "# multimodal=product@4"
    assert lines[2] == "class_index,class_name,unimodal_pct,multimodal_pct,delta_pct"
    uni = [float(l.split(",")[2]) for l in lines[3:]]
    assert uni == sorted(uni)


def test_eval_options(dump, tmp_path):
    group_file = tmp_path / "groups.csv"
    group_file.write_text("class_index,group\n" + "".join(f"{j},{'rare' if j > 5 else 'common'}\n" for j in range(8)))
    rc = main(["eval", "--predictions", str(dump / "predictions.jsonl"), "--catalog", str(dump / "catalog.csv"),
               "--group-file", str(group_file), "--methods", "borda,rrf", "--modality-counts", "1,3",
               "--topk", "1,3", "--borda-k", "3", "--rrf-m", "10", "--gamma", "2", "--seed", "9",
               "--out-dir", str(tmp_path / "r")])
    assert rc == 0
    text = (tmp_path / "r" / "report.csv").read_text()
    assert "borda_k=3 rrf_m=10 product_gamma=2.0" in text
    assert "# input groups.csv sha256=" in text
    grid = [l for l in text.splitlines() if l.startswith("grid,")]
    assert len(grid) == 2 * 2 * 2 * 2 * 3


def test_env_var_sets_default_output(dump, tmp_path, monkeypatch):
    monkeypatch.setenv("LATEFUSION_OUTPUT_DIR", str(tmp_path / "env"))
    rc = main(["eval", "--predictions", str(dump / "predictions.jsonl"), "--catalog", str(dump / "catalog.csv")])
    assert rc == 0
    assert (tmp_path / "env" / "report.csv").exists()


def test_validation_failure_is_structured(tmp_path, capsys):
    bad = tmp_path / "p.jsonl"
    bad.write_text('{"sample_id": "a", "modality": "x", "label": 0, "scores": [0.5, 0.4]}\n')
    cat = tmp_path / "c.csv"
    cat.write_text("class_index,class_name,train_count\n0,a,1\n1,b,1\n")
    rc = main(["eval", "--predictions", str(bad), "--catalog", str(cat), "--groups", "all",
               "--out-dir", str(tmp_path)])
    assert rc == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "IngestionError" and err["command"] == "eval"
    assert ":1:" in err["message"]
    # the same dump passes once renormalized
    rc = main(["eval", "--predictions", str(bad), "--catalog", str(cat), "--groups", "all", "--topk", "1",
               "--borda-k", "2", "--renormalize", "--out-dir", str(tmp_path)])
    assert rc == 0


def test_missing_catalog_file(tmp_path, capsys):
    rc = main(["eval", "--predictions", str(DATA / "golden_predictions.jsonl"),
               "--catalog", str(tmp_path / "missing.csv"), "--out-dir", str(tmp_path)])
    assert rc == 2
    assert json.loads(capsys.readouterr().err)["error"] == "FileNotFoundError"


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "latefusion", "eval", "--predictions", str(DATA / "golden_predictions.jsonl"),
         "--catalog", str(DATA / "golden_catalog.csv"), "--out-dir", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "report.csv").read_bytes() == (DATA / "golden_report.csv").read_bytes()


def test_rare_common_without_grouping_is_an_error(tmp_path, capsys):
    cat = tmp_path / "c.csv"
    cat.write_text("".join(l for l in (DATA / "golden_catalog.csv").read_text().splitlines(True))
                   .replace(",group", "").replace(",common", "").replace(",rare", ""))
    args = ["eval", "--predictions", str(DATA / "golden_predictions.jsonl"), "--catalog", str(cat),
            "--out-dir", str(tmp_path)]
    assert main(args) == 2
    assert "rare/common" in json.loads(capsys.readouterr().err)["message"]
    assert main(args + ["--rare-threshold", "10"]) == 0
    assert main(args + ["--groups", "all"]) == 0
