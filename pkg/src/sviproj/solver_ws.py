"""Incremental constraint projection method for weak-sharp stochastic VIs.

Each iteration takes a projected stochastic operator step onto the hard
set X_0, then a relaxed subgradient step on one randomly drawn soft
constraint:

    y^k     = Pi_{X_0}[x^k - alpha_k F(v^k, x^k)]
    x^{k+1} = Pi_{X_0}[y^k - beta_k g+_w(y^k) d^k / ||d^k||^2].

Also provides the stepsize policies, the explicit rate bounds and an
assumption validator.
"""
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _engine, _series
from .core import as_array
from .errors import ConfigurationError, DivergenceError, UsageError
from .metrics import RunRecord, dist_to_feasible_sq, log_grid
from .projections import ControlSequence, feasibility_step

__all__ = [
    "WsSchedule",
    "WsState",
    "ws_step",
    "run_ws",
    "compute_k0",
    "WsRateConstants",
    "XStarData",
    "WsBounds",
    "ws_bounds",
    "windowed_average",
    "validate_ws_assumptions",
]


@dataclass(frozen=True)
class WsSchedule:
    """Stepsizes alpha_k and relaxation parameters beta_k.

    Kinds
    -----
    robust
        alpha_0 = alpha_1 = theta, alpha_k = theta / sqrt(k (ln k)^(1+lam)).
    constant
        alpha_k = theta * alpha.
    horizon
        alpha_k = theta / sqrt(K + 1) for a horizon K fixed in advance.
    sqrt
        alpha_0 = theta, alpha_k = theta / sqrt(k).
    custom
        ``alpha_fn(k)`` and optionally ``beta_fn(k)``.

    beta_k = ``beta`` unless ``beta_fn`` is given.
    """

    kind: str
    theta: float = 1.0
    lam: float = 1.0
    alpha_base: float = 1.0
    horizon: int = 0
    beta: float = 1.0
    alpha_fn: Optional[Callable] = field(default=None, compare=False)
    beta_fn: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("robust", "constant", "horizon", "sqrt", "custom"):
            raise ConfigurationError(f"unknown stepsize kind {self.kind!r}")
        if self.beta_fn is None and not 0.0 < self.beta < 2.0:
            raise ConfigurationError("beta must lie in (0, 2)")
        if self.kind != "custom" and self.theta <= 0:
            raise ConfigurationError("theta must be positive")
        if self.kind == "robust" and self.lam <= 0:
            raise ConfigurationError("lambda must be positive")
        if self.kind == "constant" and self.alpha_base <= 0:
            raise ConfigurationError("alpha must be positive")
        if self.kind == "horizon" and self.horizon < 1:
            raise ConfigurationError("horizon must be at least 1")
        if self.kind == "custom" and self.alpha_fn is None:
            raise ConfigurationError("custom schedule needs alpha_fn")

    @classmethod
    def robust(cls, theta=1.0, lam=1.0, beta=1.0):
        return cls("robust", theta=theta, lam=lam, beta=beta)

    @classmethod
    def constant(cls, theta, alpha, beta=1.0):
        return cls("constant", theta=theta, alpha_base=alpha, beta=beta)

    @classmethod
    def fixed_horizon(cls, theta, K, beta=1.0):
        return cls("horizon", theta=theta, horizon=int(K), beta=beta)

    @classmethod
    def sqrt(cls, theta=1.0, beta=1.0):
        return cls("sqrt", theta=theta, beta=beta)

    @classmethod
    def custom(cls, alpha_fn, beta_fn=None, beta=1.0):
        return cls("custom", alpha_fn=alpha_fn, beta_fn=beta_fn, beta=beta)

    def alphas(self, k0, k1):
        """alpha_k for k0 <= k < k1."""
        k = np.arange(k0, k1, dtype=np.float64)
        if self.kind == "robust":
            kk = np.maximum(k, 2.0)
            out = self.theta / np.sqrt(kk * np.log(kk) ** (1.0 + self.lam))
            return np.where(k < 2, self.theta, out)
        if self.kind == "constant":
            return np.full(k.size, self.theta * self.alpha_base)
        if self.kind == "horizon":
            return np.full(k.size, self.theta / math.sqrt(self.horizon + 1))
        if self.kind == "sqrt":
            return np.where(k < 1, self.theta, self.theta / np.sqrt(np.maximum(k, 1.0)))
        return np.array([float(self.alpha_fn(int(i))) for i in range(k0, k1)], dtype=np.float64)

    def betas(self, k0, k1):
        if self.beta_fn is None:
            return np.full(k1 - k0, float(self.beta))
        return np.array([float(self.beta_fn(int(i))) for i in range(k0, k1)], dtype=np.float64)

    def alpha(self, k):
        return float(self.alphas(k, k + 1)[0])

    def beta_at(self, k):
        return float(self.betas(k, k + 1)[0])

    def B(self, k):
        b = self.beta_at(k)
        return b * (2.0 - b)

    def descriptor(self):
        d = {"kind": self.kind, "beta": self.beta}
        if self.kind in ("robust", "constant", "horizon", "sqrt"):
            d["theta"] = self.theta
        if self.kind == "robust":
            d["lambda"] = self.lam
        if self.kind == "constant":
            d["alpha"] = self.alpha_base
        if self.kind == "horizon":
            d["horizon"] = self.horizon
        return d


def _checked_beta(schedule, k):
    b = schedule.beta_at(k)
    if not 0.0 < b < 2.0:
        raise ConfigurationError(f"beta_{k} = {b} is outside (0, 2)")
    return b


class WsState(_engine.IterState):
    """State of the weak-sharp method.

    ``hat()`` is the stepsize-weighted average x-hat^k and ``tilde()`` the
    B_k-weighted average x-tilde^k, both including the current iterate.
    ``window`` > 0 keeps that many recent iterates for
    :func:`windowed_average`.
    """

    alpha_hist = None
    B_hist = None

    @classmethod
    def initial(cls, x0, spec, schedule: WsSchedule, seed, window=0):
        x0 = as_array(x0, spec.layout)
        if not spec.in_hard(x0, 1e-10):
            raise UsageError("x0 must lie in the hard set")
        st = cls(x0, seed, spec.layout.m, 1, schedule.alpha(0), schedule.B(0), x0, history=window)
        st.alpha_hist = [schedule.alpha(0)] if window else None
        st.B_hist = [schedule.B(0)] if window else None
        return st


def ws_step(state: WsState, problem, spec, schedule: WsSchedule, control: ControlSequence):
    """One iteration of the method, updating ``state`` in place.

    Draws v^k from the per-block operator streams and omega_k from the
    control stream, then accumulates the ergodic sums with weights
    alpha_{k+1} and B_{k+1}.

    Returns
    -------
    WsState
        The same object, advanced by one iteration.
    """
    k = state.k
    alpha = schedule.alpha(k)
    beta = _checked_beta(schedule, k)
    x = state.x
    sample = problem.sample(state.v_streams)
    y = as_array(spec.project_hard(x - alpha * as_array(sample.evaluate(x))))
    x_new = y.copy()
    if spec.num_constraints:
        j, i = control.draw_union(state.w_streams[0].random())
        s = spec.layout.slice(j)
        x_new[s] = as_array(feasibility_step(y[s], spec.soft[j][i], beta, spec.hard[j]))
    if not np.all(np.isfinite(x_new)):
        state.x = x_new
        state.k += 1
        raise DivergenceError(f"non-finite iterate at k={state.k}", state.k)
    a1 = schedule.alpha(k + 1)
    b1 = schedule.beta_at(k + 1)
    state.push(x_new, a1, b1 * (2.0 - b1), x_new)
    if state.alpha_hist is not None:
        state.alpha_hist.append(a1)
        state.B_hist.append(b1 * (2.0 - b1))
    return state


def _ws_coeffs(schedule, n):
    def coeffs(k0, steps):
        a = schedule.alphas(k0, k0 + steps + 1)
        b = schedule.betas(k0, k0 + steps + 1)
        alpha_c = np.repeat(a[:steps, None], n, axis=1)
        eps_c = np.zeros((steps, n))
        return alpha_c, eps_c, b[:steps, None].copy(), a[1:].copy(), b[1:] * (2.0 - b[1:])

    return coeffs


def run_ws(problem, spec, schedule: WsSchedule, control=None, k_max=1000, seed=0, x0=None,
           per_decade=10, solution=None, use_kernel=True, save_iterates=False):
    """Run the method for ``k_max`` steps, recording metrics on a log grid.

    Parameters
    ----------
    problem : StochasticProblem
    spec : FeasibleSpec
    schedule : WsSchedule
    control : ControlSequence, optional
        Uniform over all soft constraints by default.
    k_max : int
    seed : int
    x0 : array_like, optional
        Starting point in X_0; defaults to the projection of the origin.
    per_decade : int
        Grid density.
    solution : SolutionSpec, optional
        Defaults to ``problem.solution``.
    use_kernel : bool
        Use the compiled kernel when the problem supports it.
    save_iterates : bool
        Store x^k, x-hat^k and x-tilde^k at the grid points.

    Returns
    -------
    RunRecord
        Metrics ``dist_sol``, ``dist_sol_erg`` (if X* is known),
        ``feas_sq``, ``feas_sq_erg``, ``S`` and ``Z``.

    Raises
    ------
    DivergenceError
        On a non-finite iterate; ``partial`` holds the record so far.
    """
    if k_max < 0:
        raise UsageError("k_max must be nonnegative")
    control = control or ControlSequence(spec)
    solution = solution if solution is not None else problem.solution
    layout = spec.layout
    x0 = as_array(spec.project_hard(np.zeros(layout.n))) if x0 is None else as_array(x0, layout)
    state = WsState.initial(x0, spec, schedule, seed)
    grid = log_grid(k_max, per_decade)
    names = ["feas_sq", "feas_sq_erg", "S", "Z"]
    if solution is not None:
        names = ["dist_sol", "dist_sol_erg"] + names
    metrics = {nm: np.zeros(grid.size) for nm in names}
    iterates = {nm: np.zeros((grid.size, layout.n)) for nm in ("x", "x_hat", "x_tilde")} if save_iterates else {}
    comp = _engine.Compiled(problem, spec, control, True) if use_kernel and _engine.Compiled.applicable(problem, spec) else None
    coeffs = _ws_coeffs(schedule, layout.n)
    no_clip = np.full(layout.n, np.inf)
    t0 = time.perf_counter()
    rec = RunRecord(seed, schedule.descriptor(), grid, metrics, iterates)

    for gi, target in enumerate(grid):
        steps = int(target) - state.k
        if steps > 0:
            if comp is not None:
                bad = _engine.advance(state, comp, steps, coeffs, -no_clip, no_clip)
            else:
                bad = -1
                try:
                    for _ in range(steps):
                        ws_step(state, problem, spec, schedule, control)
                except DivergenceError as err:
                    bad = err.iteration
            if bad >= 0:
                rec.wall_time = time.perf_counter() - t0
                raise DivergenceError(f"non-finite iterate at k={bad}", bad, rec.truncated(gi))
        x_hat, x_til = state.hat(), state.tilde()
        if solution is not None:
            metrics["dist_sol"][gi] = solution.distance(state.x)
            metrics["dist_sol_erg"][gi] = solution.distance(x_hat)
        metrics["feas_sq"][gi] = dist_to_feasible_sq(spec, state.x)
        metrics["feas_sq_erg"][gi] = dist_to_feasible_sq(spec, x_til)
        metrics["S"][gi] = state.S
        metrics["Z"][gi] = state.Z
        # finite iterates can still overflow a squared distance
        if not all(np.isfinite(v[gi]) for v in metrics.values()):
            rec.wall_time = time.perf_counter() - t0
            raise DivergenceError(f"non-finite metric at k={state.k}", state.k, rec.truncated(gi))
        if save_iterates:
            iterates["x"][gi] = state.x
            iterates["x_hat"][gi] = x_hat
            iterates["x_tilde"][gi] = x_til
    rec.wall_time = time.perf_counter() - t0
    return rec


def compute_k0(tau, theta, L, beta, phi, lam):
    """Smallest integer k0 >= 2 with
    k0 >= exp[(2(1+tau) L^2 theta^2 / (lam beta (2-beta) phi))^(1/lam)] + 1.
    """
    if tau <= 1 or theta <= 0 or L < 0 or not 0 < beta < 2 or not 0 < phi < 1 or lam <= 0:
        raise UsageError("parameters out of range")
    inner = 2.0 * (1.0 + tau) * L**2 * theta**2 / (lam * beta * (2.0 - beta) * phi)
    bound = math.exp(inner ** (1.0 / lam)) + 1.0
    return max(2, math.ceil(bound))


@dataclass(frozen=True)
class WsRateConstants:
    """Constants entering the explicit rate bounds.

    Attributes
    ----------
    tau : float
        Free parameter > 1.
    phi : float
        Free parameter in (0, 1) (unbounded case).
    L, rho, C_g, c : float
        Lipschitz constant, sharpness modulus, subgradient bound and
        regularity constant.
    theta, lam, beta : float
        Stepsize policy parameters.
    k0 : int, optional
    C_F : float, optional
        Bound with sup E||F(v,x)||^2 <= 2 C_F^2 over X_0 (bounded case).
    """

    tau: float
    phi: float
    L: float
    rho: float
    C_g: float
    c: float
    theta: float = 1.0
    lam: float = 1.0
    beta: float = 1.0
    k0: Optional[int] = None
    C_F: Optional[float] = None

    def __post_init__(self):
        if self.tau <= 1:
            raise UsageError("tau must exceed 1")

    @property
    def G_tau(self):
        return self.c * self.C_g**2 * self.tau / (self.tau - 1.0)

    @property
    def H_tau(self):
        return 2.0 * (1.0 + self.tau)

    @property
    def B(self):
        return self.beta * (2.0 - self.beta)

    @property
    def A_tau(self):
        return self.B * (self.tau - 1.0) / (self.c * self.C_g**2 * self.tau)

    @property
    def log_factor(self):
        """2 + 1/(2 (ln 2)^(1+lam)) + 1/(lam (ln 2)^lam)."""
        l2 = math.log(2.0)
        return 2.0 + 1.0 / (2.0 * l2 ** (1.0 + self.lam)) + 1.0 / (self.lam * l2**self.lam)


@dataclass(frozen=True)
class XStarData:
    """Solution-dependent inputs of the bounds.

    dist0 is ||x^0 - x*|| (unbounded case) or dist(x^0, X*) (bounded
    case); B_star is B(x*); max_err is max_{k<=k0} E||x^k - x*||^2; diam is
    diam(X_0) for the windowed bounds.
    """

    dist0: float
    B_star: float = 0.0
    max_err: float = 0.0
    diam: Optional[float] = None


@dataclass(frozen=True)
class WsBounds:
    """Upper bounds on E[dist(x-hat^k, X*)] and E[dist(x-tilde^k, X)^2].

    ``solvability``/``feasibility`` are the theorem forms E/S and E/Z with
    the partial sums of the actual schedule; the ``*_corollary`` fields are
    the closed forms for the schedule kind (None when not applicable).
    """

    solvability: float
    feasibility: float
    solvability_corollary: Optional[float] = None
    feasibility_corollary: Optional[float] = None


def _partial_sums(schedule, k):
    a = schedule.alphas(0, k + 1)
    b = schedule.betas(0, k + 1)
    B = b * (2.0 - b)
    return {"S": float(a.sum()), "Z": float(B.sum()), "a": float((a**2).sum()), "b": float((a**2 / B).sum())}


def ws_bounds(consts: WsRateConstants, xs: XStarData, k, mode="unbounded", schedule=None, sums=None, window_r=None):
    """Evaluate the explicit rate bounds at iteration ``k``.

    Parameters
    ----------
    consts : WsRateConstants
    xs : XStarData
    k : int
    mode : {"unbounded", "bounded"}
    schedule : WsSchedule, optional
        Defaults to the robust policy with ``consts.theta``, ``consts.lam``
        and ``consts.beta``.
    sums : dict, optional
        Override of the partial sums S, Z, a, b (keys of those names).
    window_r : float, optional
        Bounded mode with compact X_0: also evaluate the windowed
        solvability corollary for the window starting at ceil(r k).

    Returns
    -------
    WsBounds
    """
    if mode not in ("unbounded", "bounded"):
        raise UsageError("mode must be 'unbounded' or 'bounded'")
    if schedule is None:
        schedule = WsSchedule.robust(consts.theta, consts.lam, consts.beta)
    ps = _partial_sums(schedule, k)
    if sums:
        ps.update(sums)
    G, H, rho, bb = consts.G_tau, consts.H_tau, consts.rho, consts.B
    th = consts.theta
    kappa = consts.log_factor
    d2 = xs.dist0**2
    cor_s = cor_f = None

    if mode == "unbounded":
        C = rho + xs.B_star
        # I(x*, k0) multiplied by L^2, so that L = 0 is allowed
        IL2 = (xs.max_err * consts.L**2 + (G / H * C**2 + xs.B_star**2) * consts.phi) / (1.0 - consts.phi)

        def E(f, g):
            return f * (d2 + (IL2 + xs.B_star**2) * H * ps["a"] + g * G * C**2 * ps["b"])

        def Q(g):
            J = (IL2 + xs.B_star**2) * H + g * G * C**2 / bb
            return d2 + J * kappa

        if schedule.kind == "robust" and k >= 2:
            cor_s = max(th, 1 / th) / (2 * rho) * math.log(k) ** ((1 + consts.lam) / 2) / math.sqrt(k + 1) * Q(1)
            cor_f = 2 * G * max(1.0, th**2) / bb * Q(2) / (k + 1)
    else:
        if consts.C_F is None:
            raise UsageError("bounded mode needs C_F")
        CF = consts.C_F
        K2 = (rho + math.sqrt(2.0) * CF) ** 2

        def E(f, g):
            return f * (d2 + g * G * K2 * ps["b"] + H * CF**2 * ps["a"])

        def Jhat(g):
            return H * CF**2 + g * G * K2 / bb

        pre_s = max(th, 1 / th) / (2 * rho)
        pre_f = 2 * G * max(1.0, th**2) / bb
        if schedule.kind == "robust" and k >= 2:
            lk = math.log(k)
            if window_r is None:
                cor_s = pre_s * lk ** ((1 + consts.lam) / 2) / math.sqrt(k + 1) * (d2 + Jhat(1) * kappa)
            else:
                if xs.diam is None or k < 2.0 / window_r:
                    raise UsageError("windowed bound needs diam and k >= 2/r")
                r = window_r
                cor_s = pre_s * lk ** ((1 + consts.lam) / 2) / math.sqrt(k) * (
                    xs.diam**2 / (1 - r) + Jhat(1) / r / (lk - math.log(1 / r)) ** (1 + consts.lam)
                )
            cor_f = pre_f * (d2 + Jhat(2) * kappa) / (k + 1)
        elif schedule.kind == "constant":
            a = schedule.alpha_base
            cor_s = pre_s * (d2 / (a * (k + 1)) + Jhat(1) * a)
            cor_f = pre_f * (d2 / (k + 1) + Jhat(2) * a**2)
        elif schedule.kind == "horizon":
            K1 = schedule.horizon + 1
            cor_s = pre_s * (d2 + Jhat(1)) / math.sqrt(K1)
            cor_f = pre_f * (d2 + Jhat(2)) / K1
        elif schedule.kind == "sqrt" and window_r is not None:
            if xs.diam is None or k < 1.0 / window_r:
                raise UsageError("windowed bound needs diam and k >= 1/r")
            r = window_r
            cor_s = pre_s / math.sqrt(k) * (xs.diam**2 / (1 - r) + Jhat(1) / r)
            cor_f = pre_f / k * (xs.diam**2 / (1 - r) + Jhat(2) / r)

    return WsBounds(E(1.0 / (2.0 * rho), 1.0) / ps["S"], E(2.0 * G, 2.0) / ps["Z"], cor_s, cor_f)


def windowed_average(state: WsState, r, weights="alpha"):
    """Weighted average of x^l, ..., x^k with l = ceil(r k).

    Parameters
    ----------
    state : WsState
        Must have been created with a ``window`` covering k - l + 1 points.
    r : float in (0, 1)
    weights : {"alpha", "B"}
        Stepsizes (solvability average) or B_i (feasibility average).
    """
    if not 0.0 < r < 1.0:
        raise UsageError("r must lie in (0, 1)")
    k = state.k
    if k < 2.0 / r:
        raise UsageError(f"windowed average needs k >= 2/r = {2.0 / r:g}")
    if state.history is None:
        raise UsageError("state keeps no history; create it with window > 0")
    lo = math.ceil(r * k)
    hist = [(i, x) for i, x in state.history if i >= lo]
    if not hist or hist[0][0] != lo:
        raise UsageError("history window too short for this r")
    w_all = state.alpha_hist if weights == "alpha" else state.B_hist
    w = np.array([w_all[i] for i, _ in hist])
    pts = np.stack([x for _, x in hist])
    return (w[:, None] * pts).sum(axis=0) / w.sum()


def validate_ws_assumptions(problem, spec, schedule: WsSchedule, control=None, horizon=10**6,
                            n_points=100, scale=2.0, seed=0):
    """Numeric report on the stepsize, sampling and regularity assumptions.

    Returns
    -------
    dict
        ``series`` (verdicts on sum alpha, sum alpha^2, sum alpha^2/B),
        ``min_probability``, ``c_formula`` (eta |I| / lambda when the spec
        carries eta), ``c_estimate`` (largest observed ratio
        dist(x,X)^2 / E[g+_w(x)^2] at sampled hard-feasible points) and
        ``warnings``.
    """
    control = control or ControlSequence(spec)
    k = np.arange(1, horizon + 1, dtype=np.float64)
    a = schedule.alphas(1, horizon + 1)
    b = schedule.betas(1, horizon + 1)
    Bk = b * (2.0 - b)
    series = [
        _series.verdict("sum alpha", k, a, "divergent"),
        _series.verdict("sum alpha^2", k, a**2, "summable"),
        _series.verdict("sum alpha^2/B", k, a**2 / Bk, "summable"),
    ]
    warnings = []
    if not series[1].passed or not series[2].passed:
        warnings.append("sum of squared stepsizes diverges: asymptotic theory inapplicable, error-bound mode only")
    if not series[0].passed:
        warnings.append("sum of stepsizes is finite")
    if Bk.min() <= 1e-12:
        warnings.append("beta (2 - beta) is not bounded away from zero")

    p_min = control.min_probability() if spec.num_constraints else float("nan")
    n_con = spec.num_constraints
    lam_ = n_con * p_min if n_con else float("nan")
    c_formula = spec.eta * n_con / lam_ if spec.eta is not None and n_con else None

    rng = np.random.default_rng(seed)
    probs = control.union_probs
    cons = spec.constraints()
    ratio = 0.0
    if n_con:
        pts = spec.sample_hard(rng, n_points, scale)
        # points just outside X probe the local regularity constant
        near = []
        for p in pts[: n_points // 2]:
            base = as_array(spec.feasible_projection(p))
            step = rng.normal(size=base.size) * 10.0 ** rng.uniform(-3, 0)
            near.append(as_array(spec.project_hard(base + step)))
        near = np.array(near).reshape(-1, spec.layout.n)
        for x in np.concatenate([pts, near]):
            d2 = dist_to_feasible_sq(spec, x)
            eg = sum(p * g.positive_part(x[spec.layout.slice(j)]) ** 2 for p, (j, _, g) in zip(probs, cons))
            if eg > 1e-300 and d2 > 0:
                ratio = max(ratio, d2 / eg)
    if c_formula is not None and ratio > c_formula * 1.05:
        warnings.append("sampled regularity ratio exceeds eta |I| / lambda")
    return {
        "series": [s.as_dict() for s in series],
        "min_probability": p_min,
        "c_formula": c_formula,
        "c_estimate": ratio,
        "warnings": warnings,
    }
