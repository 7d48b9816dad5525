import subprocess
import sys

import pytest

from mambacapsule import checkpoint
from mambacapsule.cli import main, parse_shifts
from mambacapsule.data import load_csv


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run("train", "--preset", "micro", "--synthetic", "--epochs", "2", "--out-dir", out) == 0
    return out


def test_train_artifacts(trained):
    assert {"config.ini", "train.log", "model.ckpt"} <= {p.name for p in trained.iterdir()}
    lines = (trained / "train.log").read_text().splitlines()
    assert len(lines) == 2 and lines[0].startswith("epoch=0 step=")
    _, meta = checkpoint.load(trained / "model.ckpt")
    assert meta["vocab"] == ["N", "S"]


def test_train_log_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run("train", "--preset", "micro", "--synthetic", "--epochs", "2", "--seed", "5",
                   "--out-dir", tmp_path / name) == 0
    assert (tmp_path / "a" / "train.log").read_text() == (tmp_path / "b" / "train.log").read_text()
    assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()


def test_eval_writes_reports(trained, capsys):
    assert run("eval", "--checkpoint", trained / "model.ckpt") == 0
    out = capsys.readouterr().out
    assert "F1(ACC,SEN)" in out and "F1(PPV,SEN)" in out and "overall accuracy" in out
    assert (trained / "confusion.csv").read_text().startswith("true\\pred,N,S\n")
    assert (trained / "report.csv").exists()


def test_explain_modes(trained, tmp_path, capsys):
    ck = trained / "model.ckpt"
    assert run("explain", "--checkpoint", ck, "--shifts=-2..2", "--out-dir", tmp_path) == 0
    assert "score[-2]" in (tmp_path / "explain_shift.txt").read_text()
    header = (tmp_path / "explain_shift.csv").read_text().splitlines()[0]
    assert header == "index,shift -2,shift -1,shift +0,shift +1,shift +2"
    assert run("explain", "--checkpoint", ck, "--mode", "crosslabel", "--target", "S",
               "--out-dir", tmp_path) == 0
    assert "rescaled_norm[S]" in capsys.readouterr().out
    assert (tmp_path / "explain_crosslabel.svg").exists()


def test_explain_beat_file(trained, tmp_path):
    beat = tmp_path / "beat.csv"
    beat.write_text(",".join(["0.5"] * 16) + "\n")
    assert run("explain", "--checkpoint", trained / "model.ckpt", "--beat-file", beat,
               "--shifts=0,1", "--out-dir", tmp_path) == 0
    beat.write_text("0.5,0.5\n")
    assert run("explain", "--checkpoint", trained / "model.ckpt", "--beat-file", beat,
               "--out-dir", tmp_path) == 2


def test_unknown_target_lists_vocabulary(trained, capsys):
    assert run("explain", "--checkpoint", trained / "model.ckpt", "--mode", "crosslabel",
               "--target", "V") == 2
    assert "vocabulary: N, S" in capsys.readouterr().err


def test_class_count_mismatch(trained, tmp_path):
    csv = tmp_path / "five.csv"
    csv.write_text(",".join(["0.1"] * 16) + ",4\n")
    assert run("eval", "--checkpoint", trained / "model.ckpt", "--dataset", "mitbih",
               "--test-csv", csv, "--train-csv", csv) == 2


def test_csv_dataset_training(tmp_path):
    data = tmp_path / "beats.csv"
    assert run("synth", "--out", data, "--n-per-class", 10, "--length", 16) == 0
    assert len(load_csv(data, 16, 2)) == 20
    assert run("train", "--preset", "micro", "--dataset", "ptb", "--train-csv", data,
               "--epochs", "1", "--out-dir", tmp_path / "r") == 0
    _, meta = checkpoint.load(tmp_path / "r" / "model.ckpt")
    assert meta["vocab"] == ["Normal", "Myocardial Infarction"]
    assert run("eval", "--checkpoint", tmp_path / "r" / "model.ckpt", "--split", "train") == 0


def test_config_precedence(tmp_path, monkeypatch):
    ini = tmp_path / "c.ini"
    ini.write_text("[training]\nepochs = 5\nbatch_size = 3\n")
    monkeypatch.setenv("MAMBACAPSULE_TRAINING_BATCH_SIZE", "4")
    out = tmp_path / "r"
    assert run("train", "--preset", "micro", "--synthetic", "--config", ini, "--set", "training.epochs=2",
               "--epochs", "1", "--out-dir", out) == 0
    text = (out / "config.ini").read_text()
    assert "epochs = 1" in text and "batch_size = 4" in text


@pytest.mark.parametrize("argv", [
    ["train", "--set", "model.nope=1", "--synthetic"],
    ["train", "--set", "garbage", "--synthetic"],
    ["train", "--config", "/nonexistent.ini"],
    ["train", "--dataset", "mitbih"],
    ["eval", "--checkpoint", "/nonexistent.ckpt"],
    ["synth", "--out", "/tmp/x.csv", "--n-per-class", "0"],
])
def test_usage_errors_exit_2(argv, tmp_path):
    assert run(*argv, *(["--out-dir", tmp_path] if argv[0] == "train" else [])) == 2


def test_numeric_failure_exit_3(tmp_path):
    assert run("train", "--preset", "micro", "--synthetic", "--epochs", "2", "--lr", "1e12",
               "--out-dir", tmp_path) == 3


def test_bad_checkpoint_exit_2(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint at all")
    assert run("eval", "--checkpoint", bad) == 2


def test_parse_shifts():
    assert parse_shifts("-2..1") == [-2, -1, 0, 1]
    assert parse_shifts("=3,-1") == [3, -1]
    with pytest.raises(Exception):
        parse_shifts("a..b")


def test_help_and_module_entry():
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    res = subprocess.run([sys.executable, "-m", "mambacapsule", "train", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert "(default: 30)" in res.stdout and "(default: None)" not in res.stdout
