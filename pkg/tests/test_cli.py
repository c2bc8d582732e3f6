import json
import subprocess
import sys

import pytest

from debiasbench.cli import main

CONFIG = """
[dataset]
type = synthetic
preset = small
num_users = 60
num_items = 12
slots = 3
biased_impressions = 300
randomized_impressions = {randomized}

[run]
models = mf-biased, ips
repeats = 2

[hyperparams]
max_epochs = 3
"""


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(CONFIG.format(randomized=300))
    return path


@pytest.fixture
def no_random_cfg(tmp_path):
    path = tmp_path / "seta.cfg"
    path.write_text(CONFIG.format(randomized=0))
    return path


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("ingest", "train", "evaluate", "bench", "report"):
        assert cmd in out


@pytest.mark.parametrize("argv", [["frobnicate"], ["bench", "--nope"], []])
def test_unknown_arguments(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_bench_happy_path(cfg_path, tmp_path, capsys):
    out = tmp_path / "runs"
    assert main(["bench", "--config", str(cfg_path), "--repeats", "2", "--out", str(out)]) == 0
    assert (out / "report.csv").is_file() and (out / "report.md").is_file()
    assert (out / "report.csv").read_text().startswith("dataset,model,metric,mean,ci95,improvement_pct\n")


def test_bench_twice_byte_identical(cfg_path, tmp_path):
    for run in ("a", "b"):
        assert main(["bench", "--config", str(cfg_path), "--out", str(tmp_path / run), "--format", "csv"]) == 0
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()


def test_train_dr_without_randomized(no_random_cfg, tmp_path, capsys):
    code = main(["train", "--config", str(no_random_cfg), "--model", "dr", "--out", str(tmp_path / "m.npz")])
    assert code != 0
    assert "requires randomized data" in capsys.readouterr().err
    assert not (tmp_path / "m.npz").exists()


def test_train_then_evaluate(cfg_path, tmp_path, capsys):
    ckpt = tmp_path / "m.npz"
    assert main(["train", "--config", str(cfg_path), "--model", "ips", "--seed", "4", "--out", str(ckpt)]) == 0
    capsys.readouterr()
    assert main(["evaluate", str(ckpt)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["model"] == "ips" and payload["seed"] == 4
    assert {"rmse", "auc", "ndcg_at_5", "gini", "entropy"} <= set(payload)


def test_evaluate_missing_checkpoint(tmp_path, capsys):
    out = tmp_path / "metrics.json"
    assert main(["evaluate", str(tmp_path / "none.npz"), "--out", str(out)]) != 0
    captured = capsys.readouterr()
    assert captured.out == "" and "not found" in captured.err
    assert not out.exists()


def test_ingest_and_reuse(tmp_path, capsys):
    path = tmp_path / "small.csv"
    assert main(["ingest", "--dataset", "synthetic:small", "--out", str(path), "--ground-truth", str(tmp_path / "gt.csv")]) == 0
    assert path.read_text().startswith("user,item,rating,source\n")
    assert main(["train", "--dataset", str(path), "--model", "mf-biased", "--out", str(tmp_path / "m.npz")]) == 0


def test_report_reaggregates(cfg_path, tmp_path):
    out = tmp_path / "runs"
    assert main(["bench", "--config", str(cfg_path), "--out", str(out)]) == 0
    original = (out / "report.csv").read_bytes()
    assert main(["report", str(out / "runs.csv"), "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "report.csv").read_bytes() == original


def test_console_script_entry():
    proc = subprocess.run([sys.executable, "-m", "debiasbench.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "bench" in proc.stdout
