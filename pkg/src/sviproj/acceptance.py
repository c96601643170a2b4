"""Acceptance suite: twelve checks of rates, lemmas and reproducibility.

Each ``criterion_N`` returns a :class:`CriterionResult`; :func:`run_all`
prints one PASS/FAIL line per criterion. Used by ``sviproj verify`` and
by the test suite.
"""
import functools
import math
import os
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cli import ExperimentConfig, run_experiment
from .metrics import first_hit, fit_rate
from .oracles import identification_check, tykhonov_path
from .problems import make_rotation_cartesian, make_segment_solution_affine, make_weak_sharp_lp
from .projections import ControlSequence, HardSet, SoftConstraint, check_feasstep_inequality
from .solver_tyk import TykSchedule, TykState, check_strong_monotonicity, tyk_step
from .solver_ws import (WsRateConstants, WsSchedule, WsState, XStarData, compute_k0, run_ws, ws_bounds,
                        ws_step)

__all__ = ["CriterionResult", "run_all", "CRITERIA"] + [f"criterion_{i}" for i in range(1, 13)]


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    summary: str
    elapsed: float
    limit: float
    details: dict = field(default_factory=dict)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number:2d} {status}: {self.title}: {self.summary} [{self.elapsed:.1f}s / {self.limit:g}s]"


def _timed(number, title, limit):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper():
            t0 = time.perf_counter()
            ok, summary, details = fn()
            elapsed = time.perf_counter() - t0
            within = elapsed < limit
            if not within:
                summary += f"; runtime over {limit:g}s"
            return CriterionResult(number, title, bool(ok and within), summary, elapsed, limit, details)

        wrapper.number = number
        return wrapper

    return deco


LP_CONFIG = """
[problem]
name = weak_sharp_lp
n = 5
noise_level = 1.0
seed = 0
hard = {hard}

[solver]
method = ws

[schedule]
kind = robust
theta = 1.0
lam = 2.0
beta = 1.0

[run]
k_max = 10000
seeds = 20
validate = false
"""


@functools.lru_cache(maxsize=None)
def lp_ensemble(hard="full", save_iterates=False):
    """The 20-seed robust-stepsize run on the weak-sharp LP in R^5."""
    cfg = ExperimentConfig.from_text(LP_CONFIG.format(hard=hard))
    return run_experiment(cfg, save_iterates=save_iterates)


@_timed(1, "feasibility rate O(1/k) on the weak-sharp LP", 120)
def criterion_1():
    res = lp_ensemble()
    fit = fit_rate(res.ensemble, "feas_sq_erg", (100, 10_000))
    ok = -1.3 <= fit.slope <= -0.8
    return ok, f"slope {fit.slope:.3f} (band [-1.3, -0.8], r2 {fit.r2:.3f})", {"slope": fit.slope}


@_timed(2, "weak-sharp solvability rate O(1/sqrt k)", 120)
def criterion_2():
    res = lp_ensemble()
    fit = fit_rate(res.ensemble, "dist_sol_erg", (100, 10_000))
    ok = -0.65 <= fit.slope <= -0.35
    return ok, f"slope {fit.slope:.3f} (band [-0.65, -0.35], r2 {fit.r2:.3f})", {"slope": fit.slope}


@_timed(3, "bounded-case solvability bound dominates", 120)
def criterion_3():
    res = lp_ensemble(hard="box")
    entry = res.entry
    problem = entry.problem
    n = problem.layout.n
    var = problem.noise_level**2 * n / 3.0
    C_F = math.sqrt((float(problem.b @ problem.b) + var) / 2.0)
    consts = WsRateConstants(tau=1.5, phi=0.5, L=0.0, rho=entry.solution.sharpness_rho, C_g=1.0,
                             c=entry.spec.regularity_c[0], theta=1.0, lam=2.0, beta=1.0, C_F=C_F)
    xs = XStarData(dist0=entry.solution.distance(entry.x0))
    ens = res.ensemble
    rows, ok = [], True
    for k in (100, 1000, 10_000):
        i = int(np.searchsorted(ens.grid, k))
        bound = ws_bounds(consts, xs, k, mode="bounded").solvability_corollary
        emp, se = ens.mean["dist_sol_erg"][i], ens.stderr["dist_sol_erg"][i]
        ok &= emp <= bound + 3 * se
        rows.append((k, emp, se, bound))
    summary = "; ".join(f"k={k}: {e:.3g} <= {b:.3g}" for k, e, _, b in rows)
    return ok, summary, {"rows": rows}


@_timed(4, "k0 formula", 1)
def criterion_4():
    k0 = compute_k0(1.5, 1.0, 1.0, 1.0, 0.5, 2.0)
    return k0 == 11, f"k0 = {k0}", {"k0": k0}


def _random_feasstep_instance(rng):
    n = int(rng.integers(1, 11))
    tau = float(rng.choice([1.5, 2.0]))
    beta = float(rng.choice([0.5, 1.0, 1.5]))
    hard_kind = rng.integers(0, 3)
    if hard_kind == 0:
        hard = HardSet.full(n)
    elif hard_kind == 1:
        hard = HardSet.box(-2.0 * np.ones(n), 2.0 * np.ones(n))
    else:
        hard = HardSet.ball(np.zeros(n), 3.0)
    a = rng.normal(size=n)
    if rng.random() < 0.5:
        g = SoftConstraint.affine(a, float(rng.normal()) * 0.5)
    else:
        g = SoftConstraint.distance(HardSet.ball(rng.normal(size=n) * 0.5, 1.0 + rng.random()))
    # x0: a point of X_0 where the constraint holds
    for _ in range(1000):
        x0 = hard._project(rng.normal(size=n))
        x0 = hard._project(np.asarray(g.project(x0)))
        if g.positive_part(x0) <= 1e-12:
            break
    else:
        return None
    x1 = hard._project(rng.normal(size=n) * 3.0)
    u = rng.normal(size=n) * 10.0 ** rng.uniform(-2, 1)
    alpha = 10.0 ** rng.uniform(-3, 0.5)
    return x1, u, x0, g, alpha, beta, tau, hard


@_timed(5, "feasibility-step inequality on random instances", 30)
def criterion_5():
    rng = np.random.default_rng(20240501)
    checked = violations = 0
    worst = -np.inf
    while checked < 10_000:
        inst = _random_feasstep_instance(rng)
        if inst is None:
            continue
        res = check_feasstep_inequality(*inst)
        checked += 1
        violations += not res.holds
        worst = max(worst, (res.lhs - res.rhs) / (1.0 + abs(res.rhs)))
    return violations == 0, f"{violations} violations in {checked} instances (max rel. excess {worst:.2e})", {
        "violations": violations}


@_timed(6, "eventual strong monotonicity of the regularized map", 10)
def criterion_6():
    cases = [
        ("rotation", make_rotation_cartesian(), TykSchedule.asynchronous(0.1, [1.0, 3.0], [1.0, 2.0])),
        ("segment", make_segment_solution_affine(), TykSchedule.asynchronous(0.05, [1.0, 3.0], [1.0, 2.0])),
    ]
    # every index below 50, then 50 log-spaced indices up to 1e6
    ks = np.concatenate([np.arange(50), np.round(np.logspace(np.log10(50), 6, 50)).astype(int)])
    total, details = 0, {}
    for name, entry, sch in cases:
        v = sum(check_strong_monotonicity(entry.problem.A, entry.spec.layout, sch, int(k), seed=int(k))["violations"]
                for k in ks)
        details[name] = v
        total += v
    return total == 0, f"{total} violations over 2 problems x {ks.size} indices x 1000 pairs", details


@_timed(7, "Tykhonov path bound and limit on the segment problem", 60)
def criterion_7():
    entry = make_segment_solution_affine()
    sch = TykSchedule.asynchronous(0.25, [1.0, 3.0], [1.0, 2.0])
    A = entry.problem.A
    lo, hi = entry.spec.feasible_box

    def T(x):
        return A @ x

    def project(x):
        return np.clip(x, lo, hi)

    path = tykhonov_path(T, project, sch, range(0, 101), L=2.0, layout=entry.spec.layout, x0=entry.x0)
    d = sch.derived(1, 101)
    steps = np.linalg.norm(np.diff(path.points, axis=0), axis=1)
    bound = path.M_t * d["Gamma"] / d["emin"] + 1e-6
    n_bad = int(np.sum(steps > bound))
    k_far = 10**12
    far = tykhonov_path(T, project, sch, [k_far], L=2.0, layout=entry.spec.layout, x0=path.points[-1])
    eps_min = float(far.eps.min())
    dist = float(np.linalg.norm(far.points[0] - 1.0))
    ok = n_bad == 0 and eps_min <= 1e-3 and dist <= 1e-3 and path.residuals.max() <= 1e-8
    return ok, (f"path bound violated at {n_bad}/100 steps; at k=1e12 eps_min={eps_min:.3g}, "
                f"||t-(1,1)||={dist:.3g}"), {"violations": n_bad, "dist": dist}


SEG_CONFIG = """
[problem]
name = segment
noise_level = 0.1
m = {m}

[solver]
method = tyk

[schedule]
kind = asynchronous
delta = 0.05
C = {C}
D = {D}

[run]
k_max = 100000
seeds = 10
validate = false
"""


@_timed(8, "regularized iterates reach the least-norm solution", 180)
def criterion_8():
    medians = {}
    for m, C, D in ((1, "1.0", "1.0"), (2, "1.0, 3.0", "1.0, 2.0")):
        res = run_experiment(ExperimentConfig.from_text(SEG_CONFIG.format(m=m, C=C, D=D)))
        final = [r.metrics["dist_lns"][-1] for r in res.records]
        medians[m] = float(np.median(final))
    ok = all(v <= 1e-2 for v in medians.values())
    return ok, ", ".join(f"m={m}: median {v:.3g}" for m, v in medians.items()) + " (limit 1e-2)", medians


ROT_CONFIG = """
[problem]
name = rotation
noise_level = 0.1

[solver]
method = tyk

[schedule]
kind = asynchronous
delta = 0.1
C = 1.0, 3.0
D = 1.0, 2.0

[run]
k_max = 10000
seeds = 20
x0 = 0.9, 0.6
validate = false
"""


@_timed(9, "gap rate of the regularized method", 300)
def criterion_9():
    res = run_experiment(ExperimentConfig.from_text(ROT_CONFIG))
    fit = fit_rate(res.ensemble, "gap_erg", (100, 10_000))
    ok = -0.55 <= fit.slope <= -0.25
    return ok, f"slope {fit.slope:.3f} (band [-0.55, -0.25], r2 {fit.r2:.3f})", {"slope": fit.slope}


@_timed(10, "finite identification of the optimal vertex", 60)
def criterion_10():
    res = lp_ensemble(save_iterates=True)
    entry = res.entry
    rho = entry.solution.sharpness_rho
    # T is constant here (L = 0), so the distance threshold rho/(2L) is infinite
    L = entry.problem.lipschitz_L
    threshold = math.inf if L == 0 else rho / (2.0 * L)
    k_hit = first_hit(res.ensemble.grid, res.ensemble.mean["dist_sol_erg"], threshold)
    if k_hit is None:
        return False, "threshold never reached", {}
    hits = 0
    for rec in res.records:
        out = identification_check(entry.problem, entry.vertices, rec.iterates["x_hat"][-1], 10_000,
                                   entry.solution, seed=rec.seed)
        hits += out.in_solution_set
    n = len(res.records)
    return hits == n, f"{hits}/{n} seeds identify X* (threshold reached at k={k_hit})", {
        "hits": hits}


@_timed(11, "single-agent unregularized run equals the centralized one", 5)
def criterion_11():
    entry = make_weak_sharp_lp(noise_level=1.0, seed=0)
    ws = WsSchedule.robust(1.0, 2.0, 1.0)
    tyk = TykSchedule.from_ws(ws, 1)
    control = ControlSequence(entry.spec)
    mism = 0
    for seed in range(3):
        s1 = WsState.initial(entry.x0, entry.spec, ws, seed)
        s2 = TykState.initial(entry.x0, entry.spec, tyk, seed)
        for _ in range(1000):
            ws_step(s1, entry.problem, entry.spec, ws, control)
            tyk_step(s2, entry.problem, entry.spec, tyk, control)
            mism += not np.array_equal(s1.x, s2.x)
    from .solver_tyk import run_tyk

    r1 = run_ws(entry.problem, entry.spec, ws, k_max=1000, seed=7, x0=entry.x0, save_iterates=True)
    r2 = run_tyk(entry.problem, entry.spec, tyk, k_max=1000, seed=7, x0=entry.x0, save_iterates=True)
    kernel_equal = np.array_equal(r1.iterates["x"], r2.iterates["x"])
    ok = mism == 0 and kernel_equal
    return ok, f"{mism} differing steps in 3 x 1000 generic steps; kernel grid iterates equal: {kernel_equal}", {}


DET_CONFIG = """
[problem]
name = rotation
noise_level = 0.5

[solver]
method = tyk

[schedule]
kind = asynchronous
delta = 0.1
C = 1.0, 3.0
D = 1.0, 2.0

[run]
k_max = 2000
seeds = 4

[output]
save_iterates = true
"""


@_timed(12, "run output is byte-identical across invocations", 60)
def criterion_12():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        (tmp / "det.ini").write_text(DET_CONFIG)
        outputs = []
        # same output prefix both times (it is part of the recorded config),
        # different ensemble widths
        for threads in ("1", "4"):
            env = dict(os.environ, SVI_THREADS=threads)
            proc = subprocess.run([sys.executable, "-m", "sviproj", "run", str(tmp / "det.ini"), "--out",
                                   str(tmp / "out" / "det")], env=env, capture_output=True, text=True)
            if proc.returncode != 0:
                return False, f"run exited with {proc.returncode}: {proc.stderr.strip()}", {}
            outputs.append({p.name: p.read_bytes() for p in sorted((tmp / "out").iterdir())})
            for p in (tmp / "out").iterdir():
                p.unlink()
        same = outputs[0] == outputs[1]
        names = sorted(outputs[0])
    return same, f"{len(names)} files ({', '.join(names)}) identical: {same}", {}


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
            criterion_8, criterion_9, criterion_10, criterion_11, criterion_12]


def run_all(only=None, stream=None):
    """Evaluate the criteria (all, or the numbers in ``only``), printing one line each."""
    results = []
    for fn in CRITERIA:
        if only and fn.number not in only:
            continue
        res = fn()
        results.append(res)
        if stream is not None:
            print(res.line(), file=stream, flush=True)
    return results
