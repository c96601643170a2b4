import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sviproj.cli import (EXIT_DIVERGED, EXIT_INVALID, EXIT_OK, ExperimentConfig, ensemble_threads, main,
                         read_ensemble_csv, run_experiment)
from sviproj.errors import ConfigurationError

SEGMENT = """\
[problem]
name = segment
noise_level = 0.5

[solver]
method = tyk

[schedule]
kind = asynchronous
delta = 0.1
C = 1.0, 2.0
D = 1.0, 1.5

[run]
k_max = 200
seeds = 3
"""


def _write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False).filter(lambda v: v != 0.0)


@settings(max_examples=60, deadline=None)
@given(theta=st.floats(1e-3, 1e3), lam=st.floats(1.0, 10.0), beta=st.floats(0.01, 1.99),
       k_max=st.integers(0, 10**7), seeds=st.integers(1, 500), x0=st.lists(finite, min_size=1, max_size=5),
       save=st.booleans(), level=st.floats(0.0, 100.0))
def test_config_round_trip(theta, lam, beta, k_max, seeds, x0, save, level):
    cfg = ExperimentConfig({
        "problem": {"name": "weak_sharp_lp", "noise_level": level, "kind": "simplex"},
        "solver": {"method": "ws"},
        "schedule": {"kind": "robust", "theta": theta, "lam": lam, "beta": beta},
        "run": {"k_max": k_max, "seeds": seeds, "x0": x0},
        "output": {"save_iterates": save},
    })
    back = ExperimentConfig.from_text(cfg.to_text())
    assert back.sections == cfg.sections
    assert back.to_text() == cfg.to_text()


@pytest.mark.parametrize("text", [
    SEGMENT + "bogus = 1\n",
    SEGMENT.replace("[run]", "[extra]\nx = 1\n\n[run]"),
    SEGMENT.replace("k_max = 200", "k_max = ten"),
    SEGMENT.replace("method = tyk", "method = other"),
    SEGMENT.replace("name = segment", "name = nothing"),
    SEGMENT + "k_max = 5\n",
    SEGMENT.replace("[solver]\nmethod = tyk\n", ""),
    "[DEFAULT]\nx = 1\n" + SEGMENT,
])
def test_invalid_configs_exit_2(tmp_path, text):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_text(text)
    assert main(["run", str(_write(tmp_path, text))]) == EXIT_INVALID


def test_k_max_zero_writes_initial_rows(tmp_path):
    cfg = _write(tmp_path, SEGMENT.replace("k_max = 200", "k_max = 0"))
    assert main(["run", str(cfg), "--out", str(tmp_path / "z")]) == EXIT_OK
    table = read_ensemble_csv(tmp_path / "z.csv")
    for k, mean, _, n in table.values():
        assert k.tolist() == [0.0] and n == 3
    assert table["dist_lns"][1][0] == pytest.approx(np.hypot(1.0, 3.0))


def test_run_outputs_and_sidecar(tmp_path):
    cfg = _write(tmp_path, SEGMENT + "\n[output]\nsave_iterates = true\n")
    assert main(["run", str(cfg), "--out", str(tmp_path / "a")]) == EXIT_OK
    for suffix in (".csv", ".seeds.csv", ".iterates.csv", ".json"):
        assert (tmp_path / f"a{suffix}").exists()
    side = json.loads((tmp_path / "a.json").read_text())
    assert side["seeds"] == [0, 1, 2]
    assert side["solver"] == "tyk"
    assert side["diverged"] == []
    assert len(side["verdicts"]["verdicts"]) == 10


def test_byte_determinism_across_threads(tmp_path):
    cfg = ExperimentConfig.from_text(SEGMENT)
    outs = []
    for threads in (1, 3):
        res = run_experiment(cfg, threads=threads)
        outs.append({k: v.tobytes() for k, v in res.ensemble.mean.items()})
    assert outs[0] == outs[1]
    texts = []
    for i in range(2):
        assert main(["run", str(_write(tmp_path, SEGMENT)), "--out", str(tmp_path / "d")]) == EXIT_OK
        texts.append(b"".join((tmp_path / f"d{s}").read_bytes() for s in (".csv", ".seeds.csv", ".json")))
    assert texts[0] == texts[1]


def test_divergence_exit_3_with_partial_files(tmp_path):
    text = """\
[problem]
name = rotation

[solver]
method = ws

[schedule]
kind = constant
theta = 1.0
alpha = 1000.0

[run]
k_max = 5000
seeds = 2
x0 = 0.5, 0.5
"""
    assert main(["run", str(_write(tmp_path, text)), "--out", str(tmp_path / "div")]) == EXIT_DIVERGED
    side = json.loads((tmp_path / "div.json").read_text())
    assert len(side["diverged"]) == 2
    assert (tmp_path / "div.seeds.csv").read_text().count("\n") > 1


def _synthetic_csv(path, fn, metric="feas_sq_erg"):
    lines = ["k,metric,mean,stderr,n_seeds"]
    for k in np.unique(np.round(np.logspace(0, 4, 41)).astype(int)):
        lines.append(f"{k},{metric},{float(fn(k))!r},0.0,1")
    path.write_text("\n".join(lines) + "\n")


def test_rates_on_synthetic_table(tmp_path, capsys):
    p = tmp_path / "syn.csv"
    _synthetic_csv(p, lambda k: 10.0 / k)
    assert main(["rates", str(p), "--metric", "feas_sq_erg"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "slope=-1.000000" in out
    assert "verdict=PASS" in out


def test_rates_errors(tmp_path):
    p = tmp_path / "syn.csv"
    _synthetic_csv(p, lambda k: 10.0 / k)
    assert main(["rates", str(p), "--metric", "missing"]) == EXIT_INVALID
    bad = tmp_path / "bad.csv"
    bad.write_text("k,metric,mean,stderr,n_seeds\n1,m,abc,0,1\n")
    assert main(["rates", str(bad), "--metric", "m"]) == EXIT_INVALID
    bad.write_text("a,b\n1,2\n")
    assert main(["rates", str(bad), "--metric", "m"]) == EXIT_INVALID
    assert main(["rates", str(tmp_path / "none.csv"), "--metric", "m"]) == EXIT_INVALID


def test_gap_command(tmp_path):
    cfg = _write(tmp_path, SEGMENT.replace("k_max = 200", "k_max = 100"))
    assert main(["gap", str(cfg), "--out", str(tmp_path / "g"), "--seeds", "2"]) == EXIT_OK
    table = read_ensemble_csv(tmp_path / "g.gap.csv")
    assert set(table) == {"gap_hat", "gap_last"}
    assert np.all(table["gap_hat"][1] >= -1e-12)


def test_threads_env(monkeypatch):
    monkeypatch.setenv("SVI_THREADS", "3")
    assert ensemble_threads() == 3
    monkeypatch.setenv("SVI_THREADS", "0")
    with pytest.raises(ConfigurationError):
        ensemble_threads()
    monkeypatch.delenv("SVI_THREADS")
    assert ensemble_threads() >= 1


def test_module_entry_point(tmp_path):
    cfg = _write(tmp_path, SEGMENT.replace("k_max = 200", "k_max = 10"))
    env = dict(os.environ, SVI_THREADS="1")
    proc = subprocess.run([sys.executable, "-m", "sviproj", "run", str(cfg), "--out", str(tmp_path / "m")],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "m.csv").exists()
