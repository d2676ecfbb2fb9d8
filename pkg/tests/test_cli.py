import csv
import json
import os

import numpy as np
import pytest
import yaml

from hkt import cli
from hkt.data import evaluate_listops, read_dataset
from hkt.verify import Certificate

TINY = {
    "data": {"n_train": 64, "n_val": 32, "n_test": 32, "seq_len": 32, "max_depth": 2, "max_arity": 4},
    "model": {"d_model": 32, "n_heads": 2, "n_levels": 2, "n_layers": 1},
    "train": {"epochs": 2, "warmup_epochs": 1},
}


@pytest.fixture
def spec_file(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return str(path)


@pytest.fixture
def data_dir(tmp_path, spec_file):
    out = str(tmp_path / "data")
    assert cli.main(["generate-data", "--spec", spec_file, "--out", out, "--seed", "5"]) == 0
    return out


def _lines(path):
    with open(path) as fh:
        return fh.read().splitlines()


def test_generate_default_line_counts(tmp_path, capsys):
    out = str(tmp_path / "d")
    assert cli.main(["generate-data", "--out", out, "--seed", "0"]) == 0
    counts = {s: len(_lines(os.path.join(out, f"{s}.tsv"))) for s in ("train", "val", "test")}
    assert counts == {"train": 2000, "val": 500, "test": 500}
    lines = _lines(os.path.join(out, "train.tsv"))
    for i in np.random.default_rng(0).choice(len(lines), 5, replace=False):
        ids, label = lines[i].split("\t")
        assert evaluate_listops([int(t) for t in ids.split()]) == int(label)


def test_generate_same_seed_same_checksums(tmp_path, spec_file, capsys):
    for name in ("a", "b"):
        assert cli.main(["generate-data", "--spec", spec_file, "--out", str(tmp_path / name),
                         "--seed", "7"]) == 0
    for s in ("train", "val", "test"):
        assert (tmp_path / "a" / f"{s}.tsv").read_bytes() == (tmp_path / "b" / f"{s}.tsv").read_bytes()
        assert read_dataset(str(tmp_path / "a" / f"{s}.tsv")).checksum()


def test_generate_refuses_existing_without_force(data_dir, spec_file):
    assert cli.main(["generate-data", "--spec", spec_file, "--out", data_dir]) == 3
    assert cli.main(["generate-data", "--spec", spec_file, "--out", data_dir, "--force"]) == 0


def test_usage_errors(capsys):
    assert cli.main([]) == 2
    assert cli.main(["frobnicate"]) == 2
    assert cli.main(["verify", "--bogus"]) == 2
    assert cli.main(["bench", "--grid", "L=3"]) == 2


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("model:\n  n_levels: 0\n")
    assert cli.main(["generate-data", "--spec", str(bad), "--out", str(tmp_path / "x")]) == 2
    bad.write_text("extra: 1\n")
    assert cli.main(["generate-data", "--spec", str(bad), "--out", str(tmp_path / "x")]) == 2


def test_missing_data_is_io_error(tmp_path):
    assert cli.main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "r")]) == 3


def test_verify_ops_prints_ratio(capsys, tmp_path):
    out = tmp_path / "certs.jsonl"
    assert cli.main(["verify", "--suite", "ops", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "1.3125" in text and "L=3 s=2" in text
    assert len(out.read_text().splitlines()) >= 4


def test_verify_causal_config(tmp_path, capsys):
    good = tmp_path / "causal.yaml"
    good.write_text(yaml.safe_dump({"model": {"d_model": 32, "n_heads": 2, "n_layers": 1,
                                              "max_seq_len": 16, "causal": True}}))
    assert cli.main(["verify", "--suite", "causal", "--config", str(good)]) == 0
    bad = tmp_path / "noncausal.yaml"
    bad.write_text(yaml.safe_dump({"model": {"d_model": 32, "n_heads": 2, "max_seq_len": 16}}))
    assert cli.main(["verify", "--suite", "causal", "--config", str(bad)]) == 2


def test_verify_failure_exit_code(monkeypatch, capsys):
    monkeypatch.setattr(cli, "run_suites", lambda names, seed=0: [
        Certificate("ops", "broken", False, 2.0, 1.0, {"why": "test"})])
    assert cli.main(["verify", "--suite", "ops"]) == 1
    assert "FAILED ops/broken" in capsys.readouterr().err


def test_train_eval_analyze_report(tmp_path, data_dir, spec_file, capsys):
    run = str(tmp_path / "run")
    assert cli.main(["train", "--config", spec_file, "--data", data_dir, "--out", run, "--quiet",
                     "--seed", "1"]) == 0
    for name in ("metrics.csv", "summary.json", "best.ckpt", "timing.csv"):
        assert os.path.exists(os.path.join(run, name))
    capsys.readouterr()
    assert cli.main(["eval", "--checkpoint", os.path.join(run, "best.ckpt"), "--data", data_dir]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["split"] == "test" and 0.0 <= rec["accuracy"] <= 1.0
    ana = str(tmp_path / "ana")
    assert cli.main(["analyze", "--checkpoint", os.path.join(run, "best.ckpt"), "--data", data_dir,
                     "--out", ana, "--pca-dims", "4"]) == 0
    with open(os.path.join(ana, "decomposition.csv")) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2  # one layer, two levels
    for name in ("psd.csv", "gram.jsonl", "info.csv", "info.jsonl"):
        assert os.path.exists(os.path.join(ana, name))
    assert cli.main(["report", run, "--out", str(tmp_path / "report.csv")]) == 0
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "missing.ckpt"), "--data", data_dir]) == 3


def test_train_rerun_is_byte_identical(tmp_path, data_dir, spec_file):
    for name in ("a", "b"):
        assert cli.main(["train", "--config", spec_file, "--data", data_dir,
                         "--out", str(tmp_path / name), "--quiet", "--seed", "2"]) == 0
    for f in ("metrics.csv", "summary.json", "best.ckpt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_sweep_and_bench(tmp_path, data_dir, spec_file, capsys):
    out = str(tmp_path / "sweep")
    assert cli.main(["sweep", "--config", spec_file, "--data", data_dir, "--out", out, "--quiet",
                     "--ablations", "w/o hierarchy (L=1, flat)", "--no-grid"]) == 0
    with open(os.path.join(out, "sweep.csv")) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["levels"] == "1" and rows[0]["status"] == "ok"
    bench_csv = tmp_path / "bench.csv"
    assert cli.main(["bench", "--grid", "T=16", "--d-model", "32", "--layers", "1", "--batch", "2",
                     "--repeats", "2", "--warmup", "1", "--config", spec_file,
                     "--out", str(bench_csv)]) == 0
    with open(bench_csv) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["model"] for r in rows] == ["hkt", "mha"]
    assert float(rows[0]["op_ratio"]) == 1.25 and float(rows[1]["op_ratio"]) == 1.0
