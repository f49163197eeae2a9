import json
import subprocess
import sys

import pytest

from snnguard.cli import main

SMALL = ["dataset.kind=gaussians", "dataset.n=200", "dataset.dim=4", "dataset.classes=3", "model.n_classes=3",
         "model.layer_sizes=[4,12]", "train.epochs=2", "seed=5"]


def run(*args):
    return main([str(a) for a in args])


def sets(extra=()):
    out = []
    for item in list(SMALL) + list(extra):
        out += ["--set", item]
    return out


@pytest.fixture
def trained_dir(tmp_path):
    out = tmp_path / "run"
    assert run("train", *sets(), "--out", out) == 0
    return out


def test_train_writes_outputs_and_is_deterministic(tmp_path, trained_dir):
    names = {p.name for p in trained_dir.iterdir()}
    assert {"config.json", "metrics.csv", "model.spkg"} <= names
    assert json.loads((trained_dir / "config.json").read_text())["seed"] == 5
    other = tmp_path / "again"
    assert run("train", *sets(), "--out", other) == 0
    for name in ("metrics.csv", "model.spkg", "config.json"):
        assert (other / name).read_bytes() == (trained_dir / name).read_bytes()
    header = (trained_dir / "metrics.csv").read_text().splitlines()[0]
    assert header == "epoch,mode,loss,clean_acc,constraint,neighbor_fraction,lr,lambda"


def test_periodic_checkpoints(tmp_path):
    out = tmp_path / "p"
    assert run("train", *sets(["train.checkpoint_every=1"]), "--out", out) == 0
    assert (out / "epoch0001.spkg").exists() and (out / "epoch0002.spkg").exists()


def test_attack_with_zero_budget_matches_clean(tmp_path, trained_dir, capsys):
    cfg = tmp_path / "zero.json"
    cfg.write_text(json.dumps({"attacks": [{"kind": "fgsm", "epsilon": 0.0}, {"kind": "pgd", "epsilon": 0.0,
                                                                              "iterations": 3}]}))
    assert run("attack", "--config", cfg, *sets(), "--out", trained_dir) == 0
    header, row = (trained_dir / "attack.csv").read_text().splitlines()
    values = row.split(",")[1:]
    assert header.startswith("model,clean,")
    assert len(set(values)) == 1


def test_analyze_and_report(trained_dir):
    assert run("analyze", *sets(), "--out", trained_dir, "--samples", 20) == 0
    for name in ("histogram.csv", "heatmap.csv", "heatmap.pgm", "sparsity.csv", "landscape.csv", "flips.csv"):
        assert (trained_dir / name).stat().st_size > 0
    assert (trained_dir / "heatmap.pgm").read_bytes().startswith(b"P5\n")
    assert run("report", "--out", trained_dir) == 0
    summary = (trained_dir / "summary.md").read_text()
    assert "## metrics.csv" in summary and "## flips.csv" in summary


def test_verify_exit_code(tmp_path, capsys):
    assert run("verify", "--quick", "--out", tmp_path) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 4 and all(l.startswith("PASS") for l in lines)
    assert (tmp_path / "verify.csv").exists()


def test_exit_codes(tmp_path, trained_dir, capsys):
    assert run() == 1
    assert run("frobnicate") == 1
    assert run("train", "--bogus") == 1
    assert run("train", "--set", "train.mode=adam", "--out", tmp_path) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert run("train", "--config", bad, "--out", tmp_path) == 2
    assert run("attack", *sets(), "--out", tmp_path / "empty") == 3
    assert run("attack", *sets(["model.layer_sizes=[4,13]"]), "--out", trained_dir) == 3
    corrupt = tmp_path / "c.spkg"
    corrupt.write_bytes(b"junk")
    assert run("attack", *sets(), "--checkpoint", corrupt, "--out", tmp_path) == 3
    assert run("train", *sets(["dataset.kind=idx", f"dataset.images={tmp_path}/x",
                                f"dataset.labels={tmp_path}/y"]), "--out", tmp_path) == 3
    assert run("report", "--out", tmp_path / "nothing") == 3
    assert run("--help") == 0
    capsys.readouterr()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "snnguard", "nope"], capture_output=True, text=True)
    assert res.returncode == 1 and "invalid choice" in res.stderr
