import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from bundleflow import cli
from bundleflow.experiments import ExperimentReport
from bundleflow.flow import StepCollapse
from bundleflow.state import load_checkpoint

FLAT = 'experiment = "stability"\ninitial.soliton = "flat"\ninitial.eps = 0\n' \
       'domain.sizes = [16]\nrun.horizon = 2\n'
SOL = 'experiment = "stability"\ninitial.soliton = "sol"\ndomain.sizes = [32]\n' \
      'initial.eps = 0.02\nseed = 4\nrun.checkpoint_every = 8\n'


def _write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_flat_run_exits_zero_with_constant_series(tmp_path, capsys):
    out = tmp_path / "out"
    rc = cli.main(["run", "--config", _write(tmp_path, FLAT), "--out", str(out)])
    assert rc == 0
    assert "PASS" in capsys.readouterr().out
    rows = list(csv.reader(open(out / "stability_flat.csv")))
    assert rows[0] == ["t", "distance"]
    assert {r[1] for r in rows[1:]} == {"0.0"}
    report = json.loads((out / "stability_flat.json").read_text())
    assert report["passed"] is True
    assert (out / "config.txt").exists() and (out / "checkpoint.zip").exists()


def test_split_run_and_resume_reproduce_the_straight_run(tmp_path):
    cfg = _write(tmp_path, SOL)
    full, part, cont = (tmp_path / d for d in ("full", "part", "cont"))
    assert cli.main(["run", "--config", cfg, "--out", str(full),
                     "--override", "run.horizon=2"]) == 0
    assert cli.main(["run", "--config", cfg, "--out", str(part),
                     "--override", "run.horizon=1.5"]) == 0
    assert cli.main(["resume", str(part / "checkpoint.zip"), "--out", str(cont),
                     "--override", "run.horizon=2"]) == 0
    for name in ("stability_sol.csv", "stability_sol.json"):
        assert (full / name).read_bytes() == (cont / name).read_bytes()
    a = load_checkpoint(str(full / "checkpoint.zip"))
    b = load_checkpoint(str(cont / "checkpoint.zip"))
    assert a.t == b.t and np.array_equal(a.G, b.G) and np.array_equal(a.g, b.g)


def test_seed_flag_changes_the_run(tmp_path):
    cfg = _write(tmp_path, SOL + "run.horizon = 1.2\n")
    for seed in (1, 2):
        assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / str(seed)),
                         "--seed", str(seed)]) == 0
    a = (tmp_path / "1" / "stability_sol.csv").read_bytes()
    b = (tmp_path / "2" / "stability_sol.csv").read_bytes()
    assert a != b
    assert "seed = 2" in (tmp_path / "2" / "config.txt").read_text()


def test_validate_and_export(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", _write(tmp_path, FLAT), "--out", str(out)]) == 0
    ckpt = str(out / "checkpoint.zip")
    assert cli.main(["validate", ckpt]) == 0
    assert "state: ok" in capsys.readouterr().out
    assert cli.main(["validate", _write(tmp_path, FLAT, "other.cfg")]) == 0
    dump = tmp_path / "dump"
    assert cli.main(["export", ckpt, "--out", str(dump)]) == 0
    rows = list(csv.reader(open(dump / "state.csv")))
    assert rows[0][0] == "t" and float(rows[0][1]) == 2.0
    assert rows[1][:3] == ["i0", "x0", "G_00"]
    assert len(rows) == 2 + 16
    assert (dump / "anchor.csv").exists()


def test_truncated_checkpoint_exits_two(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", _write(tmp_path, FLAT), "--out", str(out)]) == 0
    data = (out / "checkpoint.zip").read_bytes()
    bad = tmp_path / "bad.zip"
    bad.write_bytes(data[: len(data) // 2])
    assert cli.main(["validate", str(bad)]) == 2
    assert cli.main(["resume", str(bad)]) == 2
    assert "error" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["run"],
    ["validate", "/nonexistent/file.cfg"],
])
def test_usage_errors_exit_two(argv):
    assert cli.main(argv) == 2


def test_config_errors_exit_two(tmp_path, capsys):
    assert cli.main(["validate", _write(tmp_path, FLAT + "domain.holonomy = [[2]]\n")]) == 2
    assert cli.main(["run", "--config", _write(tmp_path, "nonsense = 1\n")]) == 2
    assert "line 1" in capsys.readouterr().err


def test_non_resumable_experiment_exits_two(tmp_path):
    text = 'experiment = "blowdown"\ninitial.soliton = "flat"\ndomain.sizes = [16]\n' \
           'run.scales = [1, 2]\ninitial.eps = 0\n'
    out = tmp_path / "out"
    # the flat base is not an expander with constant potential, so the verdict fails
    assert cli.main(["run", "--config", _write(tmp_path, text), "--out", str(out)]) == 1
    assert cli.main(["resume", str(out / "checkpoint.zip"), "--override", "run.horizon=3"]) == 2


def test_failed_verdict_and_solver_collapse_exit_one(tmp_path, monkeypatch):
    cfg = _write(tmp_path, FLAT)

    def failing(*_a, **_k):
        rep = ExperimentReport("stability_flat", {})
        rep.add(10, "distance decreases", False, 1.0, 0.0)
        return rep

    monkeypatch.setattr(cli, "run_experiment", failing)
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "a")]) == 1

    def collapsing(*_a, **_k):
        raise StepCollapse("dt below floor")

    monkeypatch.setattr(cli, "run_experiment", collapsing)
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "b")]) == 1


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "bundleflow", "validate",
                          _write(tmp_path, FLAT)], capture_output=True, text=True)
    assert res.returncode == 0 and "config ok" in res.stdout
