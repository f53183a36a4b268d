import json
import math
import os
import subprocess
import sys
from pathlib import Path

import pytest

from cocyclelab.cli import main
from cocyclelab.config import ConfigError, TASKS, parse_config
from cocyclelab.io import fmt, read_csv

GOLDEN_RATE = math.log((3 + math.sqrt(5)) / 2)

FREE = '[model]\nkind = "free"\n'
ANDERSON = '[model]\nkind = "anderson"\nW = 1\n'

SMALL = {
    "lyapunov": FREE + '[lyapunov]\nz = [3.0, [0.5, 1.0]]\nn = 2000\n',
    "field": FREE + '[field]\nn = 200\ngrid = {x0 = -1.0, x1 = 1.0, y0 = 0.5, y1 = 1.5, h = 0.1}\n',
    "riesz": FREE + '[riesz]\nestimator = "analytic"\nstrip = [-1.0, 1.0]\npotential_at = [3.0]\n'
                    'grid = {x0 = -4.0, x1 = 4.0, y0 = -2.0, y1 = 2.0, h = 0.1}\n',
    "circular": ANDERSON + '[circular]\nR = [5.0]\nntheta = 64\nn = 200\n',
    "ids": FREE + '[ids]\nL = 500\n',
    "thouless": FREE + '[thouless]\nL = 500\nsamples = 1\nn = 2000\nlyap_samples = 1\npoints = [3.0, [0.0, 1.0]]\n',
    "scan-liminf": ANDERSON + '[scan-liminf]\nenergies = {start = -1.0, stop = 1.0, num = 11}\ni_max = 12\n'
                              'ref_n = 2000\nref_samples = 2\n',
    "scan-pn": ANDERSON + '[scan-pn]\nenergies = {start = -1.0, stop = 1.0, num = 11}\nn_max = 50\n'
                          'weight = {kind = "power", param = 1.0}\n',
    "cover": ANDERSON + '[cover]\ninterval = [0.0, 1.0]\neps = 0.2\nlevels = [20, 30]\norbits = 2\n'
                        'ref_n = 2000\nref_samples = 2\n',
    "subseq": ANDERSON + '[subseq]\nE = 0.5\nN_max = 500\nref_n = 2000\nref_samples = 2\n',
    "restricted": '[model]\nkind = "anderson"\nW = 2\n[restricted]\nz = [0.0, 1.0]\nn = 300\nframes = 3\n',
    "green": FREE + '[green]\nz = [0.0, 1.0]\nn_max = 30\nL = 60\n',
    "ldp": ANDERSON + '[ldp]\nE = 0.5\nepsilon = 0.3\nn_list = [50, 100]\nM = 1000\nref_n = 2000\nref_samples = 2\n',
}


def write_config(tmp_path, body, seed=7, name="exp.toml"):
    path = tmp_path / name
    path.write_text(f"version = 1\nseed = {seed}\n" + body)
    return path


def run(task, cfg, out, *extra):
    return main([task, "--config", str(cfg), "--out", str(out), "--threads", "2", *extra])


def test_every_task_has_a_smoke_config():
    assert set(SMALL) == set(TASKS)


@pytest.mark.parametrize("task", TASKS)
def test_task_writes_consistent_artifacts(task, tmp_path):
    cfg = write_config(tmp_path, SMALL[task])
    out = tmp_path / "out"
    assert run(task, cfg, out) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["task"] == task and manifest["seed"] == 7
    stem = task.replace("-", "_")
    summary = json.loads((out / f"{stem}_summary.json").read_text())
    assert set(summary["tables"]) == set(manifest["columns"])
    for name, json_rows in summary["tables"].items():
        header, rows = read_csv(out / name)
        assert header == manifest["columns"][name]
        # the JSON summary carries the same numbers as the CSV, digit for digit
        assert [[fmt(v) for v in r] for r in json_rows] == rows
    for name in manifest["files"]:
        assert (out / name).exists()


def test_lyapunov_value(tmp_path):
    cfg = write_config(tmp_path, FREE + '[lyapunov]\nz = [3.0]\nn = 100000\n')
    out = tmp_path / "o"
    assert run("lyapunov", cfg, out) == 0
    header, rows = read_csv(out / "lyapunov_lyapunov.csv")
    row = dict(zip(header, rows[0]))
    assert abs(float(row["gamma"]) - 0.96242) <= 1e-3
    assert abs(float(row["gamma"]) - GOLDEN_RATE) <= 1e-3


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path, '[modle]\nkind = "free"\n[lyapunov]\nz = [3.0]\nn = 100\n')
    assert run("lyapunov", cfg, tmp_path / "o") != 0
    report = json.loads(capsys.readouterr().err)
    assert report["error"] == "config"
    assert any("modle" in p for p in report["problems"])


@pytest.mark.parametrize("body,needle", [
    ('version = 2\nseed = 1\n' + FREE + '[lyapunov]\nz = [3.0]\nn = 100\n', "version"),
    ('version = 1\n' + FREE + '[lyapunov]\nz = [3.0]\nn = 100\n', "seed"),
    ('version = 1\nseed = 1\n' + FREE + '[lyapunov]\nz = [3.0]\nn = 100\nextra = 1\n', "lyapunov.extra"),
    ('version = 1\nseed = 1\n' + FREE + '[lyapunov]\nn = 100\n', "lyapunov.z"),
    ('version = 1\nseed = 1\n' + FREE + '[lyapunov]\nz = [3.0]\nn = 100\n[green]\nz = [0.0, 1.0]\n', "green"),
    ('version = 1\nseed = 1\n[model]\nkind = "anderson"\nv = "big"\n[lyapunov]\nz = [3.0]\nn = 100\n', "model.v"),
])
def test_schema_errors(tmp_path, capsys, body, needle):
    path = tmp_path / "bad.toml"
    path.write_text(body)
    assert main(["lyapunov", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    problems = json.loads(capsys.readouterr().err)["problems"]
    assert any(needle in p for p in problems)


def test_all_problems_listed():
    data = {"version": 1, "seed": 1, "model": {"kind": "free", "Q": 1}, "lyapunov": {"n": 0, "zz": 1}}
    with pytest.raises(ConfigError) as exc:
        parse_config(data, "lyapunov")
    text = " ".join(exc.value.problems)
    for part in ("model.Q", "lyapunov.zz", "lyapunov.z", "lyapunov.n"):
        assert part in text


def test_command_line_seed_overrides(tmp_path):
    cfg = write_config(tmp_path, SMALL["subseq"], seed=1)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("subseq", cfg, a, "--seed", "2") == 0
    assert json.loads((a / "manifest.json").read_text())["seed"] == 2
    assert run("subseq", cfg, b) == 0
    assert json.loads((b / "manifest.json").read_text())["seed"] == 1


def test_task_error_report(tmp_path, capsys):
    # the analytic field exists for the free model only
    body = ANDERSON + '[riesz]\nestimator = "analytic"\ngrid = {x0 = -1.0, x1 = 1.0, y0 = -1.0, y1 = 1.0, h = 0.1}\n'
    cfg = write_config(tmp_path, body)
    out = tmp_path / "o"
    assert run("riesz", cfg, out) == 3
    report = json.loads(capsys.readouterr().err)
    assert report["module"] and report["operation"] and len(report["inputs_digest"]) == 64
    assert json.loads((out / "error.json").read_text()) == report


@pytest.mark.parametrize("task", ["lyapunov", "scan-pn", "restricted", "cover"])
def test_rerun_is_bitwise_identical(task, tmp_path):
    cfg = write_config(tmp_path, SMALL[task])
    assert run(task, cfg, tmp_path / "a") == 0
    assert main([task, "--config", str(cfg), "--out", str(tmp_path / "b"), "--threads", "1"]) == 0
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["numeric_hash"] == mb["numeric_hash"]
    assert ma["files"] == mb["files"]


def test_out_dir_precedence(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, f'out = "{tmp_path / "from_config"}"\n' + SMALL["ids"])
    monkeypatch.setenv("COCYCLELAB_OUT", str(tmp_path / "from_env"))
    assert main(["ids", "--config", str(cfg), "--threads", "1"]) == 0
    assert (tmp_path / "from_env" / "manifest.json").exists()
    assert not (tmp_path / "from_config").exists()
    assert main(["ids", "--config", str(cfg), "--out", str(tmp_path / "flag"), "--threads", "1"]) == 0
    assert (tmp_path / "flag" / "manifest.json").exists()
    monkeypatch.delenv("COCYCLELAB_OUT")
    assert main(["ids", "--config", str(cfg), "--threads", "1"]) == 0
    assert (tmp_path / "from_config" / "manifest.json").exists()


def test_console_script(tmp_path):
    cfg = write_config(tmp_path, SMALL["green"])
    env = dict(os.environ, COCYCLELAB_OUT=str(tmp_path / "o"))
    proc = subprocess.run([sys.executable, "-m", "cocyclelab.cli", "green", "--config", str(cfg)],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["out"] == str(tmp_path / "o")
    assert Path(tmp_path / "o" / "green_green.csv").exists()
