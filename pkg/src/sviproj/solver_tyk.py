"""Regularized incremental projection method for Cartesian stochastic VIs.

Agent j owns block x_j and, in every synchronous round, reads the common
x^k and updates

    y_j^k     = Pi_{X_0^j}[x_j^k - alpha_{k,j}(F_j(v_j^k, x^k) + eps_{k,j} x_j^k)]
    x_j^{k+1} = Pi_{X_0^j}[y_j^k - beta_{k,j} g+(y_j^k) d_j^k / ||d_j^k||^2]

with its own stepsize, regularization and constraint draw. The
regularization drives the iterates to the least-norm solution.
"""
import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _engine, _series
from .core import AffineProblem, as_array
from .errors import ConfigurationError, DivergenceError, UsageError
from .metrics import RunRecord, dist_to_feasible_sq, log_grid
from .projections import ControlSequence, feasibility_step

__all__ = [
    "TykSchedule",
    "TykState",
    "tyk_step",
    "run_tyk",
    "validate_tyk_assumptions",
    "sigma_k",
    "check_strong_monotonicity",
    "TykRateConstants",
    "tyk_rate_bounds",
]


class TykSchedule:
    """Per-agent stepsizes, relaxation and regularization sequences.

    Use :meth:`asynchronous`, :meth:`custom` or :meth:`from_ws`. Arrays
    returned by the ``*s(k0, k1)`` methods have shape (k1 - k0, m).
    eps at k = -1 is defined as eps at k = 0.
    """

    def __init__(self, kind, m, alpha_fn, eps_fn, beta_fn, params=None):
        self.kind = kind
        self.m = int(m)
        self._alpha = alpha_fn
        self._eps = eps_fn
        self._beta = beta_fn
        self.params = params or {}

    @classmethod
    def asynchronous(cls, delta, C, D, beta=1.0, s_alpha=1.0, s_eps=1.0):
        """alpha_{k,j} = s_alpha/(k+C_j)^(1/2+delta), eps_{k,j} = s_eps/(k+D_j)^(1/2-delta).

        Parameters
        ----------
        delta : float in (0, 1/2)
        C, D : sequence of positive float, one per agent
        beta : float or sequence of float in (0, 2)
        s_alpha, s_eps : positive float
        """
        C = np.array(C, dtype=np.float64).reshape(-1)
        D = np.array(D, dtype=np.float64).reshape(-1)
        m = C.size
        beta = np.broadcast_to(np.array(beta, dtype=np.float64), (m,)).copy()
        if not 0.0 < delta < 0.5:
            raise ConfigurationError("delta must lie in (0, 1/2)")
        if D.size != m:
            raise ConfigurationError("C and D need one entry per agent")
        if np.any(C <= 0) or np.any(D <= 0):
            raise ConfigurationError("offsets C_j and D_j must be positive")
        if np.any(beta <= 0) or np.any(beta >= 2):
            raise ConfigurationError("beta_j must lie in (0, 2)")
        if s_alpha <= 0 or s_eps <= 0:
            raise ConfigurationError("scale factors must be positive")
        a, b = 0.5 + delta, 0.5 - delta

        def alpha_fn(k):
            return s_alpha / (k[:, None] + C[None, :]) ** a

        def eps_fn(k):
            return s_eps / (np.maximum(k, 0.0)[:, None] + D[None, :]) ** b

        def beta_fn(k):
            return np.broadcast_to(beta, (k.size, m)).copy()

        params = {"delta": float(delta), "C": C.tolist(), "D": D.tolist(), "beta": beta.tolist(),
                  "s_alpha": float(s_alpha), "s_eps": float(s_eps)}
        return cls("asynchronous", m, alpha_fn, eps_fn, beta_fn, params)

    @classmethod
    def custom(cls, m, alpha_fn, eps_fn=None, beta_fn=None, beta=1.0):
        """Sequences given by scalar-index callables returning length-m arrays.

        ``eps_fn`` defaults to zero and ``beta_fn`` to the constant ``beta``.
        """

        def vec(fn, default):
            def f(k):
                if fn is None:
                    return np.full((k.size, m), default)
                return np.array([np.broadcast_to(np.asarray(fn(int(i)), dtype=np.float64), (m,)) for i in k])
            return f

        return cls("custom", m, vec(alpha_fn, np.nan), vec(eps_fn, 0.0), vec(beta_fn, float(beta)), {})

    @classmethod
    def from_ws(cls, ws_schedule, m=1):
        """Synchronous parameters with eps = 0 that mirror a WsSchedule."""

        def alpha_fn(k):
            return np.repeat(ws_schedule.alphas(int(k[0]), int(k[-1]) + 1)[:, None], m, axis=1)

        def beta_fn(k):
            return np.repeat(ws_schedule.betas(int(k[0]), int(k[-1]) + 1)[:, None], m, axis=1)

        def eps_fn(k):
            return np.zeros((k.size, m))

        return cls("synchronous", m, alpha_fn, eps_fn, beta_fn, {"ws": ws_schedule.descriptor()})

    def _k(self, k0, k1):
        return np.arange(k0, k1, dtype=np.float64)

    def alphas(self, k0, k1):
        return self._alpha(self._k(k0, k1))

    def epss(self, k0, k1):
        """eps for k0 <= k < k1, with eps_{-1} = eps_0."""
        k = self._k(k0, k1)
        return self._eps(np.maximum(k, 0.0))

    def betas(self, k0, k1):
        return self._beta(self._k(k0, k1))

    def alpha(self, k):
        return self.alphas(k, k + 1)[0]

    def eps(self, k):
        return self.epss(k, k + 1)[0]

    def beta(self, k):
        return self.betas(k, k + 1)[0]

    def derived(self, k0, k1):
        """Per-k aggregates for k0 <= k < k1.

        Returns
        -------
        dict of ndarray
            ``amin``, ``amax``, ``emin``, ``emax``, ``Delta`` (amax - amin),
            ``Gamma`` (eps_{k-1,max} - eps_{k,min}) and ``B``
            (beta_min (2 - beta_max)).
        """
        a = self.alphas(k0, k1)
        e = self.epss(k0 - 1, k1)
        b = self.betas(k0, k1)
        emax_all = e.max(axis=1)
        out = {
            "amin": a.min(axis=1),
            "amax": a.max(axis=1),
            "emin": e[1:].min(axis=1),
            "emax": emax_all[1:],
            "B": b.min(axis=1) * (2.0 - b.max(axis=1)),
        }
        out["Delta"] = out["amax"] - out["amin"]
        out["Gamma"] = emax_all[:-1] - out["emin"]
        out["bmin"] = b.min(axis=1)
        out["bmax"] = b.max(axis=1)
        return out

    def descriptor(self):
        return {"kind": self.kind, "m": self.m, **self.params}


class TykState(_engine.IterState):
    """State of the regularized method.

    ``tilde()`` is the B_k-weighted average of the iterates; ``hat()`` is
    the alpha_{k,max}-weighted average of their feasible projections.
    """

    @classmethod
    def initial(cls, x0, spec, schedule: TykSchedule, seed, project=None):
        x0 = as_array(x0, spec.layout)
        if not spec.in_hard(x0, 1e-10):
            raise UsageError("x0 must lie in the hard set")
        d = schedule.derived(0, 1)
        proj = project(x0) if project is not None else x0
        return cls(x0, seed, spec.layout.m, spec.layout.m, d["amax"][0], d["B"][0], proj)


def _check_eps(schedule, k0, k1):
    e = schedule.epss(k0 - 1, k1)
    if np.any(np.diff(e, axis=0) > 0):
        raise ConfigurationError("regularization sequence must be nonincreasing")
    if np.any(e < 0):
        raise ConfigurationError("regularization sequence must be nonnegative")


def tyk_step(state: TykState, problem, spec, schedule: TykSchedule, control: ControlSequence, project=None):
    """One synchronous round of all agents, updating ``state`` in place.

    Parameters
    ----------
    project : callable, optional
        Exact feasible projection used for the gap average; without it the
        raw iterate is accumulated.
    """
    k = state.k
    _check_eps(schedule, k, k + 1)
    alpha, eps, beta = schedule.alpha(k), schedule.eps(k), schedule.beta(k)
    if np.any(beta <= 0) or np.any(beta >= 2):
        raise ConfigurationError("beta left (0, 2)")
    layout = spec.layout
    x = state.x
    sample = problem.sample(state.v_streams)
    y = np.empty_like(x)
    for j in range(layout.m):
        s = layout.slice(j)
        fj = sample.evaluate_block(j, x)
        y[s] = spec.hard[j]._project(x[s] - alpha[j] * (fj + eps[j] * x[s]))
    x_new = y.copy()
    for j in range(layout.m):
        if not spec.soft[j]:
            continue
        i = control.draw_block(j, state.w_streams[j].random())
        s = layout.slice(j)
        x_new[s] = as_array(feasibility_step(y[s], spec.soft[j][i], beta[j], spec.hard[j]))
    if not np.all(np.isfinite(x_new)):
        state.x = x_new
        state.k += 1
        raise DivergenceError(f"non-finite iterate at k={state.k}", state.k)
    d = schedule.derived(k + 1, k + 2)
    state.push(x_new, d["amax"][0], d["B"][0], project(x_new) if project is not None else x_new)
    return state


def _tyk_coeffs(schedule, layout):
    reps = np.array(layout.sizes)

    def coeffs(k0, steps):
        _check_eps(schedule, k0, k0 + steps)
        a = np.repeat(schedule.alphas(k0, k0 + steps), reps, axis=1)
        e = np.repeat(schedule.epss(k0, k0 + steps), reps, axis=1)
        b = schedule.betas(k0, k0 + steps)
        d = schedule.derived(k0 + 1, k0 + steps + 1)
        return a, e, b, d["amax"], d["B"]

    return coeffs


def run_tyk(problem, spec, schedule: TykSchedule, control=None, k_max=1000, seed=0, x0=None,
            per_decade=10, solution=None, use_kernel=True, save_iterates=False, gap=True):
    """Run the regularized method, recording metrics on a log grid.

    Returns
    -------
    RunRecord
        Metrics ``dist_lns`` (distance to the least-norm solution),
        ``dist_sol`` (when X* is known), ``feas_sq``, ``feas_sq_erg``,
        ``gap_erg`` (dual gap of the average of projected iterates, for
        affine problems over a box) and the weight sums ``S``, ``Z``.

    Notes
    -----
    When the spec has no exact feasible projection, Pi(x^i) in the gap
    average is computed by Dykstra at grid points only and stands in for
    every iterate since the previous grid point.
    """
    from .oracles import gap_value

    if k_max < 0:
        raise UsageError("k_max must be nonnegative")
    if schedule.m != spec.layout.m:
        raise ConfigurationError("schedule and problem have different numbers of agents")
    control = control or ControlSequence(spec)
    solution = solution if solution is not None else problem.solution
    layout = spec.layout
    x0 = as_array(spec.project_hard(np.zeros(layout.n))) if x0 is None else as_array(x0, layout)
    box = spec.feasible_box
    exact = spec.exact_feasible_projection
    state = TykState.initial(x0, spec, schedule, seed, exact)
    logging_proj = exact is None
    if logging_proj:
        state.hat_sum = state.sums[0] * as_array(spec.feasible_projection(x0))
    grid = log_grid(k_max, per_decade)
    do_gap = gap and isinstance(problem, AffineProblem) and box is not None
    names = ["feas_sq", "feas_sq_erg", "S", "Z"]
    if solution is not None:
        names = ["dist_sol"] + names
        if solution.least_norm_solution is not None:
            names = ["dist_lns"] + names
    if do_gap:
        names.append("gap_erg")
    metrics = {nm: np.zeros(grid.size) for nm in names}
    iterates = {nm: np.zeros((grid.size, layout.n)) for nm in ("x", "x_hat", "x_tilde")} if save_iterates else {}
    use = use_kernel and _engine.Compiled.applicable(problem, spec) and (box is not None or logging_proj)
    comp = _engine.Compiled(problem, spec, control, False) if use else None
    coeffs = _tyk_coeffs(schedule, layout)
    if box is not None:
        flo, fhi = box
    else:
        flo, fhi = np.full(layout.n, -np.inf), np.full(layout.n, np.inf)
    t0 = time.perf_counter()
    rec = RunRecord(seed, schedule.descriptor(), grid, metrics, iterates)

    for gi, target in enumerate(grid):
        steps = int(target) - state.k
        if steps > 0:
            S_prev = state.S
            scratch = state.hat_sum.copy()
            if comp is not None:
                bad = _engine.advance(state, comp, steps, coeffs, flo, fhi)
            else:
                bad = -1
                try:
                    for _ in range(steps):
                        tyk_step(state, problem, spec, schedule, control, exact)
                except DivergenceError as err:
                    bad = err.iteration
            if bad >= 0:
                rec.wall_time = time.perf_counter() - t0
                raise DivergenceError(f"non-finite iterate at k={bad}", bad, rec.truncated(gi))
            if logging_proj:
                state.hat_sum = scratch + (state.S - S_prev) * as_array(spec.feasible_projection(state.x))
        x_hat, x_til = state.hat(), state.tilde()
        if solution is not None:
            metrics["dist_sol"][gi] = solution.distance(state.x)
            if "dist_lns" in metrics:
                metrics["dist_lns"][gi] = float(np.linalg.norm(state.x - solution.least_norm_solution))
        metrics["feas_sq"][gi] = dist_to_feasible_sq(spec, state.x)
        metrics["feas_sq_erg"][gi] = dist_to_feasible_sq(spec, x_til)
        if do_gap:
            metrics["gap_erg"][gi] = max(gap_value(problem, box, x_hat), 0.0)
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


def validate_tyk_assumptions(schedule: TykSchedule, horizon=10**6):
    """Numeric verdicts on the coordination conditions of the schedule.

    Every limit is judged by the power-law exponent of the term over the
    last decade before ``horizon`` (see :mod:`sviproj._series`).

    Returns
    -------
    dict
        ``verdicts`` (list of dicts with name, kind, exponent, partial sum,
        last term, passed), ``all_passed``, ``eps_ratio`` (value of
        eps_max/eps_min at the horizon) and ``eps_ratio_class`` ("le1",
        "finite" or "unbounded").
    """
    if horizon < 1000:
        raise UsageError("horizon must be at least 1000")
    d = schedule.derived(1, horizon + 1)
    k = np.arange(1, horizon + 1, dtype=np.float64)
    ae = d["amin"] * d["emin"]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 + 1.0 / ae
        items = [
            ("amax^2/(amin emin) -> 0", d["amax"] ** 2 / ae, "to_zero"),
            ("amax^2/(B amin emin) -> 0", d["amax"] ** 2 / (d["B"] * ae), "to_zero"),
            ("Delta/(amin emin) -> 0", d["Delta"] / ae, "to_zero"),
            ("amin emin -> 0", ae, "to_zero"),
            ("sum amin emin = inf", ae, "divergent"),
            ("sum amax^2 < inf", d["amax"] ** 2, "summable"),
            ("sum amax^2/B < inf", d["amax"] ** 2 / d["B"], "summable"),
            ("sum (Gamma/emin)^2 (1 + 1/(amin emin)) < inf", (d["Gamma"] / d["emin"]) ** 2 * inv, "summable"),
            ("sum Delta^2/(amin emin) < inf", d["Delta"] ** 2 / ae, "summable"),
            ("Gamma^2/(emin^3 amin) (1 + 1/(amin emin)) -> 0",
             d["Gamma"] ** 2 / (d["emin"] ** 3 * d["amin"]) * inv, "to_zero"),
        ]
        ratio = d["emax"] / d["emin"]
    verdicts = [_series.verdict(name, k, np.nan_to_num(t, nan=np.inf), kind) for name, t, kind in items]
    if _series.tail_exponent(k, ratio - 1.0) < -_series.MARGIN or np.all(ratio[k >= horizon / 10] <= 1.0):
        cls = "le1"
    elif _series.tail_exponent(k, ratio) <= _series.MARGIN:
        cls = "finite"
    else:
        cls = "unbounded"
    return {
        "verdicts": [v.as_dict() for v in verdicts],
        "all_passed": all(v.passed for v in verdicts),
        "eps_ratio": float(ratio[-1]),
        "eps_ratio_class": cls,
    }


def sigma_k(schedule: TykSchedule, k, L):
    """alpha_min eps_min - L (alpha_max - alpha_min) at iteration k."""
    if L < 0:
        raise UsageError("L must be nonnegative")
    d = schedule.derived(k, k + 1)
    return float(d["amin"][0] * d["emin"][0] - L * d["Delta"][0])


def check_strong_monotonicity(A, layout, schedule: TykSchedule, k, pairs=1000, seed=0, scale=3.0, tol=1e-12):
    """Check <H_k(y) - H_k(x), y - x> >= sigma_k ||y - x||^2 on random pairs,
    with H_k = D(alpha_k)(T + D(eps_k)) and T(x) = A x.

    L is taken as the spectral norm of A.

    Returns
    -------
    dict
        ``sigma`` (sigma_k), ``min_margin`` (smallest margin divided by
        ||y - x||^2) and ``violations`` (pairs with relative margin < -tol).
    """
    A = np.asarray(A, dtype=np.float64)
    rng = np.random.default_rng(seed)
    reps = np.array(layout.sizes)
    a = np.repeat(schedule.alpha(k), reps)
    e = np.repeat(schedule.eps(k), reps)
    sig = sigma_k(schedule, k, float(np.linalg.norm(A, 2)))
    x = rng.normal(size=(pairs, layout.n)) * scale
    y = rng.normal(size=(pairs, layout.n)) * scale
    Hx = a * (x @ A.T + e * x)
    Hy = a * (y @ A.T + e * y)
    d = y - x
    dd = np.einsum("ij,ij->i", d, d)
    rel = (np.einsum("ij,ij->i", Hy - Hx, d) - sig * dd) / dd
    return {"sigma": sig, "min_margin": float(rel.min()), "violations": int(np.sum(rel < -tol))}


@dataclass(frozen=True)
class TykRateConstants:
    """Constants of the feasibility and gap rate bounds.

    Attributes
    ----------
    tau : float > 1
    mu : float in (0, 1)
    L : float
    C : float
        max_j c^j.
    C_g : float
        min_j of the subgradient bounds.
    M_t, B_t : float, optional
        sup ||t^k|| and sup B(t^k) along the regularized path.
    diam, B_X, M_X : float, optional
        diam(X), sup_X B and sup_X ||x|| (gap bound).
    B_xbar0, sigma_xbar0 : float, optional
        B and sigma at the projection of x^0 onto X (gap bound).
    """

    tau: float
    mu: float
    L: float
    C: float
    C_g: float
    M_t: Optional[float] = None
    B_t: Optional[float] = None
    diam: Optional[float] = None
    B_X: Optional[float] = None
    M_X: Optional[float] = None
    B_xbar0: Optional[float] = None
    sigma_xbar0: Optional[float] = None

    def __post_init__(self):
        if self.tau <= 1:
            raise UsageError("tau must exceed 1")
        if not 0 < self.mu < 1:
            raise UsageError("mu must lie in (0, 1)")

    @property
    def G_tau(self):
        return self.C * self.C_g**2 * self.tau / (self.tau - 1.0)

    def H(self, d):
        return 4.0 * (1.0 + self.tau * d["bmax"] * (2.0 - d["bmin"]))

    def q(self, d, R):
        return (1.0 - 2.0 * (1.0 - self.mu) * d["amin"] * d["emin"]
                + self.H(d) * (R**2 + d["emax"] ** 2) * d["amax"] ** 2 + 2.0 * self.L * d["Delta"])


def tyk_rate_bounds(consts: TykRateConstants, schedule: TykSchedule, k, mode, series=None, clip=True,
                    Hbar_horizon=None):
    """Right-hand side of the feasibility or gap rate bound at iteration k.

    Parameters
    ----------
    consts : TykRateConstants
    schedule : TykSchedule
    k : int
    mode : {"feasibility", "gap"}
    series : array_like, optional
        Empirical E||x^i - t^i||^2 (feasibility) or E[dist(x^i, X)^2]
        (gap) for i = 0..k; zero when omitted.
    clip : bool
        Replace negative f_i / h_i (i >= 1) by zero, which keeps a valid
        upper bound.
    Hbar_horizon : int, optional
        Horizon for the max of H_k (defaults to k). The schedules here have
        constant beta, so H_k is constant.

    Returns
    -------
    float
        Bound on E[dist(x-tilde^k, X)^2] or on E[G(x-hat^k)].
    """
    if mode not in ("feasibility", "gap"):
        raise UsageError("mode must be 'feasibility' or 'gap'")
    d = schedule.derived(0, k + 1)
    e0max = float(d["emax"][0])
    series = np.zeros(k + 1) if series is None else np.asarray(series, dtype=np.float64)
    if series.size != k + 1:
        raise UsageError("series needs one value per index 0..k")
    G = consts.G_tau
    Hbar = float(consts.H(schedule.derived(0, (Hbar_horizon or k) + 1)).max())
    a2 = d["amax"] ** 2
    ae = d["amin"] * d["emin"]
    with np.errstate(divide="ignore", invalid="ignore"):
        delta_term = np.where(d["Delta"] == 0, 0.0, d["Delta"] ** 2 / ae)
    q = consts.q(d, consts.L)

    if mode == "feasibility":
        if consts.M_t is None or consts.B_t is None:
            raise UsageError("feasibility bound needs M_t and B_t")
        f = q * (1.0 + ae)
        f[1:] -= 1.0
        if clip:
            f[1:] = np.maximum(f[1:], 0.0)
        I_t = consts.B_t + e0max * consts.M_t
        J_t = Hbar * (2.0 * consts.B_t**2 + e0max**2 * consts.M_t**2)
        gam = consts.M_t * d["Gamma"] / d["emin"]
        total = (2 * G * np.sum(f * series) + 2 * G * J_t * a2.sum()
                 + G * I_t**2 / consts.mu * delta_term.sum()
                 + 4 * G**2 * I_t**2 * np.sum(a2 / d["B"])
                 + 2 * G * np.sum(q * gam**2 * (1.0 + 1.0 / ae)))
        return float(total / d["B"].sum())

    needed = (consts.diam, consts.B_X, consts.M_X, consts.B_xbar0, consts.sigma_xbar0)
    if any(v is None for v in needed):
        raise UsageError("gap bound needs diam, B_X, M_X, B_xbar0 and sigma_xbar0")
    diam, L = consts.diam, consts.L
    h = q.copy()
    h[1:] -= 1.0
    if clip:
        h[1:] = np.maximum(h[1:], 0.0)
    I_X = consts.B_X + e0max * consts.M_X
    J_X = Hbar * (2 * L**2 * diam**2 + 2 * consts.B_xbar0**2 + e0max**2 * consts.M_X**2)
    K_X = 6 * L**2 * diam**2 + 3 * consts.sigma_xbar0**2
    total = (diam**2 + 2 * np.sum(h * (series + diam**2)) + (J_X + K_X) * a2.sum()
             + G * (I_X + 2 * L * diam) ** 2 * np.sum(a2 / d["B"])
             + I_X**2 / (2 * consts.mu) * delta_term.sum()
             + 2 * diam * consts.M_X * np.sum(d["amax"] * d["emax"]))
    return float(total / (2.0 * d["amax"].sum()))
