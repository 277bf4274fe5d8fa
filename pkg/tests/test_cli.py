import json
import subprocess
import sys

import pytest

from epbcdet.harness.cli import main

TINY = ["--set", "model.width=8", "--set", "model.resolution=32", "--set", "model.num_classes=3",
        "--set", 'model.carafe={"compressed": 4}', "--set", "train.batch_size=4", "--set", "train.seed=2",
        "--set", 'synth={"seed": 0, "n_train": 6, "n_val": 3, "resolution": 32, "classes": 3}']


def test_synth(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "d"), "--n-train", "3", "--n-val", "2", "--resolution", "32"]) == 0
    assert "train: 3 images" in capsys.readouterr().out
    assert len(list((tmp_path / "d" / "val" / "images").iterdir())) == 2


def test_train_eval_and_report(tmp_path, capsys):
    args = ["train", *TINY, "--epochs", "1", "--out-dir", str(tmp_path), "--name", "run"]
    assert main(args) == 0
    run = tmp_path / "run"
    resolved = json.loads((run / "config.json").read_text())
    assert resolved["train"]["epochs"] == 1 and resolved["train"]["seed"] == 2
    metrics = (run / "metrics.csv").read_bytes()
    capsys.readouterr()
    assert main(["eval", "--run", str(run)]) == 0
    assert "mAP50" not in capsys.readouterr().err
    (run / "confusion.svg").unlink()
    assert main(["report", str(run)]) == 0
    assert (run / "confusion.svg").exists()
    # same config twice gives identical metric files
    assert main(["train", "--config", str(run / "config.json"), "--name", "again"]) == 0
    assert (tmp_path / "again" / "metrics.csv").read_bytes() == metrics


def test_eval_perfect_prediction_files(tmp_path, capsys):
    (tmp_path / "t.txt").write_text("a 0 0 0 10 10\na 1 20 20 30 36\nb 2 5 5 9 9\n")
    (tmp_path / "p.txt").write_text("a 0 0.9 0 0 10 10\na 1 0.8 20 20 30 36\nb 2 0.7 5 5 9 9\n")
    assert main(["eval", "--pred", str(tmp_path / "p.txt"), "--truth", str(tmp_path / "t.txt"),
                 "--out", str(tmp_path / "o")]) == 0
    last = [ln for ln in capsys.readouterr().out.splitlines() if ln.strip().startswith("all")][0]
    assert last.split()[2] == "1.0000"
    assert (tmp_path / "o" / "pr_curve.svg").exists()


def test_gradcheck_primitive_tier(capsys):
    assert main(["gradcheck", "--tier", "primitive"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "checks passed" in out and "err " in out


def test_errors_exit_nonzero(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["train", "--bogus"])
    assert e.value.code == 2
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 2
    assert "error:" in capsys.readouterr().err
    assert main(["eval", "--run", str(tmp_path / "nowhere")]) == 2
    assert main(["eval"]) == 2
    assert main(["report", str(tmp_path)]) == 2
    assert main(["train", "--set", "train.nope=1"]) == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "epbcdet.harness.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "gradcheck" in r.stdout
