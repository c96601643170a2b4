"""Run records, seed aggregation, log-log rate fits and Monte Carlo estimators."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import RngStream, as_array, noise_stream_id
from .errors import DataError, LayoutError, UsageError

__all__ = [
    "RunRecord",
    "EnsembleRecord",
    "RateFit",
    "log_grid",
    "aggregate",
    "fit_power_law",
    "fit_rate",
    "first_hit",
    "dist_to_feasible_sq",
    "estimate_B_and_sigma",
]


def log_grid(k_max, per_decade=10):
    """Iteration indices 0, 1, ... spaced geometrically up to ``k_max``.

    Contains 0, every power of ten up to ``k_max`` and ``k_max`` itself.
    """
    k_max = int(k_max)
    if k_max < 0:
        raise UsageError("k_max must be nonnegative")
    if k_max == 0:
        return np.zeros(1, dtype=np.int64)
    top = int(np.ceil(np.log10(k_max) * per_decade)) if k_max > 1 else 0
    pts = np.round(10.0 ** (np.arange(top + 1) / per_decade)).astype(np.int64)
    pts = np.concatenate([[0], pts[pts <= k_max], [k_max]])
    return np.unique(pts)


@dataclass
class RunRecord:
    """Metric series of one seeded run on a grid of iteration indices.

    Attributes
    ----------
    seed : int
    schedule : dict
        Plain-data description of the schedule.
    grid : ndarray of int
    metrics : dict of str -> ndarray
        One value per grid index.
    iterates : dict of str -> ndarray
        Optional saved points, shape (len(grid), n).
    wall_time : float
        Seconds spent in the run.
    """

    seed: int
    schedule: dict
    grid: np.ndarray
    metrics: dict
    iterates: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def check(self):
        if np.any(np.diff(self.grid) <= 0):
            raise DataError("grid must be strictly increasing")
        for name, vals in self.metrics.items():
            if vals.shape != self.grid.shape:
                raise DataError(f"metric {name} does not match the grid")
            if not np.all(np.isfinite(vals)) or np.any(vals < 0):
                raise DataError(f"metric {name} has non-finite or negative values")

    def truncated(self, count):
        """Copy restricted to the first ``count`` grid points."""
        return RunRecord(
            self.seed,
            self.schedule,
            self.grid[:count].copy(),
            {k: v[:count].copy() for k, v in self.metrics.items()},
            {k: v[:count].copy() for k, v in self.iterates.items()},
            self.wall_time,
        )


@dataclass
class EnsembleRecord:
    """Seed-wise mean and standard error of the metrics of several runs."""

    records: list
    grid: np.ndarray
    schedule: dict
    mean: dict
    stderr: dict

    @property
    def n_seeds(self):
        return len(self.records)

    @property
    def metric_names(self):
        return sorted(self.mean)


def _record_key(r):
    return (r.seed, tuple(sorted((k, v.tobytes()) for k, v in r.metrics.items())))


def aggregate(records):
    """Pointwise mean and standard error over seeds.

    The result does not depend on the order of ``records``: they are sorted
    by seed (then content) before any arithmetic.

    Raises
    ------
    LayoutError
        If grids, schedules or metric names differ.
    """
    if not records:
        raise UsageError("aggregate needs at least one record")
    recs = sorted(records, key=_record_key)
    grid = recs[0].grid
    names = set(recs[0].metrics)
    for r in recs[1:]:
        if not np.array_equal(r.grid, grid):
            raise LayoutError("records have different grids")
        if r.schedule != recs[0].schedule:
            raise LayoutError("records have different schedules")
        if set(r.metrics) != names:
            raise LayoutError("records have different metrics")
    mean, stderr = {}, {}
    n = len(recs)
    for name in sorted(names):
        stack = np.stack([r.metrics[name] for r in recs])
        mu = stack.sum(axis=0) / n
        mean[name] = mu
        if n > 1:
            # records cut short by divergence may hold huge values; an infinite stderr is the honest result
            with np.errstate(over="ignore", invalid="ignore"):
                stderr[name] = np.sqrt(((stack - mu) ** 2).sum(axis=0) / (n - 1) / n)
        else:
            stderr[name] = np.zeros_like(mu)
    return EnsembleRecord(recs, grid.copy(), recs[0].schedule, mean, stderr)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    n_points: int


def fit_power_law(k, y):
    """Least-squares line through (log k, log y).

    Raises
    ------
    DataError
        With fewer than five points or nonpositive values.
    """
    k = np.asarray(k, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if k.size < 5:
        raise DataError("need at least five points for a rate fit")
    if np.any(k <= 0) or np.any(~np.isfinite(y)) or np.any(y <= 0):
        raise DataError("rate fit needs positive k and positive finite values")
    lx, ly = np.log(k), np.log(y)
    xm, ym = lx.mean(), ly.mean()
    sxx = float(((lx - xm) ** 2).sum())
    slope = float(((lx - xm) * (ly - ym)).sum() / sxx)
    intercept = float(ym - slope * xm)
    resid = ly - (intercept + slope * lx)
    sst = float(((ly - ym) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / sst if sst > 0 else 1.0
    return RateFit(slope, intercept, r2, int(k.size))


def fit_rate(ensemble: EnsembleRecord, metric, k_range=(100, None)):
    """Fit log(mean metric) against log k over ``k_range`` (inclusive).

    The default lower end 100 drops the transient prefix.
    """
    if metric not in ensemble.mean:
        raise DataError(f"metric {metric!r} not recorded")
    kmin, kmax = k_range
    grid = ensemble.grid
    sel = grid >= (kmin if kmin is not None else 1)
    if kmax is not None:
        sel &= grid <= kmax
    sel &= grid > 0
    return fit_power_law(grid[sel], ensemble.mean[metric][sel])


def first_hit(grid, values, threshold):
    """First grid index k with ``values`` below ``threshold``, or None.

    An empirical stand-in for the iteration after which a distance stays
    small; it is only resolved to the logging grid.
    """
    below = np.nonzero(np.asarray(values) < threshold)[0]
    return None if below.size == 0 else int(np.asarray(grid)[below[0]])


def dist_to_feasible_sq(spec, x):
    """||x - Pi_X(x)||^2 with the exact projection when available, else Dykstra."""
    arr = as_array(x, spec.layout)
    p = as_array(spec.feasible_projection(arr))
    with np.errstate(over="ignore"):
        return float(np.sum((arr - p) ** 2))


def estimate_B_and_sigma(problem, x, n_samples=10_000, seed=0):
    """Monte Carlo estimates of B(x) = sqrt(E||F(v,x)||^2) and sigma(x).

    sigma(x)^2 = E||F(v,x) - T(x)||^2 uses the exact mean operator when the
    problem has one, otherwise the sample mean (with Bessel correction).

    Returns
    -------
    dict
        Keys ``B``, ``sigma``, ``B_stderr``, ``sigma_stderr``.
    """
    if n_samples < 100:
        raise UsageError("n_samples must be at least 100")
    arr = as_array(x, problem.layout)
    layout = problem.layout
    streams = [RngStream(seed, noise_stream_id(j)) for j in range(layout.m)]
    draws = [problem.draw_noise(j, streams[j], n_samples) for j in range(layout.m)]
    F = np.empty((n_samples, layout.n))
    for s in range(n_samples):
        for j in range(layout.m):
            F[s, layout.slice(j)] = problem.evaluate_block(j, draws[j][s], arr)
    sq = np.sum(F**2, axis=1)
    if problem.has_mean_operator:
        dev = np.sum((F - as_array(problem.mean_operator(arr))) ** 2, axis=1)
        sigma2 = dev.mean()
    else:
        dev = np.sum((F - F.mean(axis=0)) ** 2, axis=1)
        sigma2 = dev.sum() / (n_samples - 1)
    B2 = sq.mean()
    B = float(np.sqrt(B2))
    sigma = float(np.sqrt(sigma2))
    B2_se = sq.std(ddof=1) / np.sqrt(n_samples)
    s2_se = dev.std(ddof=1) / np.sqrt(n_samples)
    # delta method for the square roots
    return {
        "B": B,
        "sigma": sigma,
        "B_stderr": float(B2_se / (2 * B)) if B > 0 else 0.0,
        "sigma_stderr": float(s2_se / (2 * sigma)) if sigma > 0 else 0.0,
    }
