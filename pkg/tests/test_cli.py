import csv
import json
import subprocess
import sys

import pytest

from glstm import network, presets
from glstm.cli import main
from glstm.core import make_rng
from glstm.timegate import GateParams

TINY = ["--train-samples", "20", "--test-samples", "10", "--hidden", "4", "--batch-size", "10"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def checkpoint(tmp_path):
    rng = make_rng(0)
    m = network.build_model(2, 4, 1, rng, gate=GateParams.init(4, (1.0, 30.0), 5.0, rng))
    path = tmp_path / "ck.json"
    path.write_text(network.dumps_checkpoint(m))
    return path


def test_train_contract(tmp_path):
    out = tmp_path / "run"
    assert run("train", "--preset", "adding-1000", "--epochs", 2, "--seed", 7,
               "--seq-len", 30, "--out", out, *TINY) == 0
    rows = list(csv.reader(open(out / "metrics.csv")))
    assert rows[0] == ["epoch", "train_loss", "test_loss", "test_ler", "mean_openness",
                       "wall_time_s"]
    assert len(rows) == 3
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"final_loss", "final_ler", "mean_openness"}
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["seed"] == 7 and cfg["epochs"] == 2 and cfg["preset"] == "adding-1000"
    assert cfg["seq_len"] == 30 and cfg["mu_range"] == [300.0, 700.0]
    network.load_checkpoint(out / "final.json")


def test_train_same_seed_identical_csv(tmp_path):
    def metrics(name):
        assert run("train", "--preset", "adding-desk", "--epochs", 2, "--seed", 3,
                   "--seq-len", 20, "--out", tmp_path / name, *TINY) == 0
        rows = list(csv.reader(open(tmp_path / name / "metrics.csv")))
        return [r[:-1] for r in rows]  # wall time excluded

    assert metrics("a") == metrics("b")


def test_train_config_file_and_override(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"task": "adding", "seq_len": 15, "hidden": 3, "epochs": 5,
                                "train_samples": 10, "test_samples": 10}))
    out = tmp_path / "r"
    assert run("train", "--config", conf, "--epochs", 1, "--out", out,
               "--checkpoint-every", 1) == 0
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["epochs"] == 1 and cfg["hidden"] == 3
    assert (out / "checkpoint_epoch0001.json").exists()


def test_train_missing_dataset_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    assert run("train", "--preset", "smnist", "--data-dir", missing, "--out", tmp_path / "o") == 2
    assert str(missing) in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["--preset", "no-such-preset"],
    ["--config", "/does/not/exist.json"],
    ["--hidden", "0"],
    ["--bogus-flag"],
])
def test_train_config_errors(argv, tmp_path):
    assert run("train", *argv, "--out", tmp_path / "o") == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_nan_exit_code(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"seq_len": 10, "hidden": 3, "epochs": 1, "lr": 1e300,
                                "train_samples": 20, "test_samples": 10, "batch_size": 5}))
    assert run("train", "--config", conf, "--out", tmp_path / "o") == 4


def test_eval_and_threshold_sweep(checkpoint, capsys):
    assert run("eval", "--checkpoint", checkpoint, "--seq-len", 30, "--samples", 40) == 0
    plain = json.loads(capsys.readouterr().out)
    totals = []
    for v in (0.0, 0.001, 0.01, 0.1):
        assert run("eval", "--checkpoint", checkpoint, "--seq-len", 30, "--samples", 40,
                   "--vt", v) == 0
        doc = json.loads(capsys.readouterr().out)
        if v == 0.0:
            assert doc["thresholded_loss"] == plain["loss"]
        totals.append(doc["ops"]["thresholded_total"])
    assert totals == sorted(totals, reverse=True)


def test_eval_bad_checkpoints(tmp_path, checkpoint):
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    assert run("eval", "--checkpoint", bad) == 3
    doc = json.loads(checkpoint.read_text())
    doc["version"] = 42
    wrong = tmp_path / "v.json"
    wrong.write_text(json.dumps(doc))
    assert run("eval", "--checkpoint", wrong) == 3
    assert run("eval", "--checkpoint", tmp_path / "missing.json") == 3


def test_gradnorm(checkpoint, tmp_path):
    out = tmp_path / "g.csv"
    assert run("gradnorm", "--checkpoint", checkpoint, "--seq-len", 30, "--samples", 5,
               "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "t,gamma" and len(lines) == 31
    assert run("gradnorm", "--checkpoint", checkpoint, "--samples", 0, "--out", out) == 2


def test_export_gate(checkpoint, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("export-gate", "--checkpoint", checkpoint, "--steps", 30, "--out", a) == 0
    assert run("export-gate", "--checkpoint", checkpoint, "--steps", 30, "--out", b) == 0
    assert a.read_text() == b.read_text()
    assert len(a.read_text().splitlines()) == 5


def test_export_gate_needs_gate(tmp_path):
    m = network.build_model(2, 3, 1, make_rng(0))
    path = tmp_path / "lstm.json"
    path.write_text(network.dumps_checkpoint(m))
    assert run("export-gate", "--checkpoint", path, "--steps", 5, "--out", tmp_path / "x") == 3


def test_gen_data(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("gen-data", "--seq-len", 8, "--count", 5, "--seed", 2, "--out", a) == 0
    assert run("gen-data", "--seq-len", 8, "--count", 5, "--seed", 2, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(a.read_text().splitlines()) == 6
    assert run("gen-data", "--seq-len", 1, "--count", 5, "--out", a) == 2


def test_threads_flag_does_not_change_results(tmp_path):
    outs = []
    for threads in (1, 2):
        out = tmp_path / f"t{threads}"
        assert run("--threads", threads, "train", "--preset", "adding-desk", "--epochs", 1,
                   "--seq-len", 20, "--out", out, *TINY) == 0
        outs.append((out / "final.json").read_text())
    assert outs[0] == outs[1]


def test_presets_complete():
    expected = {"adding-1000", "adding-2000", "smnist", "pmnist", "curriculum",
                "appendix-A1", "appendix-A2", "appendix-A3", "chrono-784", "chrono-250",
                "size-25", "size-110", "size-220", "smnist-budgeted-lambda0.1",
                "smnist-budgeted-lambda1", "smnist-budgeted-lambda10"}
    assert expected <= set(presets.PRESETS)
    from glstm.training import TrainConfig
    for name in presets.PRESETS:
        TrainConfig.from_dict(presets.preset(name))


def test_module_entry_point(tmp_path):
    out = tmp_path / "d.csv"
    proc = subprocess.run([sys.executable, "-m", "glstm", "gen-data", "--seq-len", "4",
                           "--count", "2", "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
