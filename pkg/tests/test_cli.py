import json

import numpy as np
import pytest

from stdistill.cli import main
from stdistill.data import load_traffic_csv
from stdistill.graph import load_adjacency_csv

TINY = """[synth]
n_nodes = 6
t_total = 160
[teacher]
d = 4
n_layers = 2
[data]
T = 6
H = 3
[distill]
epochs = 2
teacher_epochs = 2
[bench]
repeats = 2
"""


@pytest.fixture
def env(tmp_path, monkeypatch):
    cfg = tmp_path / "tiny.ini"
    cfg.write_text(TINY)
    monkeypatch.setenv("STDISTILL_OUT", str(tmp_path / "runs"))
    return cfg


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, (json.loads(out.strip().splitlines()[-1]) if code == 0 else json.loads(err.strip()))


def test_synth_files_load_and_are_deterministic(env, capsys):
    _, a = run(capsys, "synth", "--config", str(env))
    _, b = run(capsys, "synth", "--config", str(env))
    assert a["run_dir"] != b["run_dir"]
    t = load_traffic_csv(a["traffic"])
    assert t.values.shape == (6, 160)
    g = load_adjacency_csv(a["adjacency"], 6)
    assert g.n_edges == a["n_edges"]
    for k in ("traffic", "adjacency"):
        assert open(a[k], "rb").read() == open(b[k], "rb").read()


def test_pipeline(env, capsys, tmp_path):
    code, t = run(capsys, "train-teacher", "--config", str(env))
    assert code == 0
    code, s = run(capsys, "distill", "--config", str(env), "--teacher", t["checkpoint"])
    assert code == 0 and "kl_gradient" in s
    code, m = run(capsys, "eval", "--config", str(env), "--ckpt", s["checkpoint"])
    assert code == 0 and m["metrics"]["mae"] > 0
    code, m = run(capsys, "eval", "--config", str(env), "--ckpt", t["checkpoint"])
    assert len(m["oversmoothing"]) == 3
    code, b = run(capsys, "bench", "--config", str(env), "--teacher", t["checkpoint"], "--student", s["checkpoint"])
    assert code == 0 and b["speedup"] > 0
    report = json.loads(open(b["report"]).read())
    assert report["protocol"]["statistic"] == "median"
    assert set(report["reports"]) == {"teacher", "student"}


def test_eval_refuses_mismatched_manifest(env, capsys, tmp_path):
    _, t = run(capsys, "train-teacher", "--config", str(env))
    other = tmp_path / "other.ini"
    other.write_text(TINY.replace("d = 4", "d = 8"))
    code, err = run(capsys, "eval", "--config", str(other), "--ckpt", t["checkpoint"])
    assert code == 1
    assert err["error"] == "CheckpointError" and "'base' expected shape (8,)" in err["message"]


def test_config_error_exit_code(env, capsys, tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[teacher]\nwidth = 3\n")
    code, err = run(capsys, "synth", "--config", str(bad))
    assert code == 2 and "width" in err["message"] and "[teacher]" in err["message"]


def test_gradcheck_command(env, capsys):
    code, res = run(capsys, "gradcheck", "--config", str(env), "--seeds", "1")
    assert code == 0 and res["checked"] >= 16


def test_seed_flag_changes_data(env, capsys):
    _, a = run(capsys, "synth", "--config", str(env), "--seed", "1")
    _, b = run(capsys, "synth", "--config", str(env), "--seed", "2")
    assert not np.array_equal(load_traffic_csv(a["traffic"]).values, load_traffic_csv(b["traffic"]).values)
