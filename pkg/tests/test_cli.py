from __future__ import annotations

import os

from broadcast_rhc.cli import main
from broadcast_rhc.graph import parse_edge_list


def test_bound(capsys):
    assert main(["bound", "n=15", "s0=1", "r=0.22", "dt=1"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "tau1=12.0"
    assert abs(float(out[1].split("=")[1]) - 17.0590) < 1e-4


def test_bound_bad_key(capsys):
    assert main(["bound", "m=3"]) == 2


def test_gen(tmp_path):
    path = tmp_path / "g.txt"
    assert main(["gen", "n=10", "p=0.3", "seed=4", "-o", str(path)]) == 0
    t, _ = parse_edge_list(path.read_text())
    assert t.n == 10


def test_run_outputs(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("model=open-loop,rmc n=6 p=0.5 trials=2 K=2\n")
    out = tmp_path / "res"
    assert main(["run", str(cfg), "--out", str(out)]) == 0
    names = set(os.listdir(out))
    assert {"summary.csv", "bins.csv", "diff.csv", "manifest.txt", "open-loop", "rmc"} <= names
    assert set(os.listdir(out / "rmc")) == {"events-0.csv", "events-1.csv", "decisions-0.csv", "decisions-1.csv"}
    lines = (out / "summary.csv").read_text().splitlines()
    assert lines[0] == "model,fraction,mean_time,min_time,max_time"
    assert len(lines) == 1 + 2 * 5
    # the manifest alone reruns the experiment
    again = tmp_path / "again"
    assert main(["run", str(out / "manifest.txt"), "--out", str(again)]) == 0
    assert (again / "summary.csv").read_bytes() == (out / "summary.csv").read_bytes()


def test_run_errors(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("model=ctmc n=100\n")
    assert main(["run", str(cfg)]) == 2
    assert "model" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.cfg")]) == 4
    cfg.write_text("model=open-loop n=3 graph=" + str(tmp_path / "nope.txt") + "\n")
    assert main(["run", str(cfg)]) == 4
