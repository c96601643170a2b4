import numpy as np
import pytest

from sviproj.core import AffineProblem, BlockLayout
from sviproj.errors import DataError, LayoutError, UsageError
from sviproj.metrics import (RunRecord, aggregate, dist_to_feasible_sq, estimate_B_and_sigma, first_hit,
                             fit_power_law, fit_rate, log_grid)
from sviproj.oracles import project_polytope_exact
from sviproj.projections import FeasibleSpec, HardSet, SoftConstraint


def test_log_grid():
    assert log_grid(0).tolist() == [0]
    assert log_grid(1).tolist() == [0, 1]
    g = log_grid(1000, per_decade=1)
    assert g.tolist() == [0, 1, 10, 100, 1000]
    g = log_grid(1234)
    assert g[0] == 0 and g[-1] == 1234 and np.all(np.diff(g) > 0)
    with pytest.raises(UsageError):
        log_grid(-1)


@pytest.mark.parametrize("p", [0.5, 1.0, 2.0])
def test_exact_power_laws(p):
    k = np.logspace(1, 5, 20)
    fit = fit_power_law(k, 3.0 * k**-p)
    assert fit.slope == pytest.approx(-p, abs=1e-12)
    assert fit.intercept == pytest.approx(np.log(3.0), abs=1e-10)
    assert fit.r2 == pytest.approx(1.0)


def test_log_over_sqrt_slope():
    k = np.logspace(2, 6, 40)
    fit = fit_power_law(k, np.log(k) / np.sqrt(k))
    assert -0.5 < fit.slope < -0.35


def test_fit_errors():
    with pytest.raises(DataError):
        fit_power_law([1, 2, 3], [1, 1, 1])
    with pytest.raises(DataError):
        fit_power_law([1, 2, 3, 4, 5], [1, 0, 1, 1, 1])
    with pytest.raises(DataError):
        fit_power_law([1, 2, 3, 4, 5], [1, np.nan, 1, 1, 1])


def _rec(seed, vals, grid=None, schedule=None):
    grid = np.arange(len(vals)) if grid is None else grid
    return RunRecord(seed, schedule or {"kind": "x"}, np.asarray(grid), {"m": np.asarray(vals, dtype=float)})


def test_aggregate_mean_and_stderr():
    recs = [_rec(0, [1.0, 2.0]), _rec(1, [3.0, 2.0])]
    ens = aggregate(recs)
    assert ens.mean["m"].tolist() == [2.0, 2.0]
    assert ens.stderr["m"][0] == pytest.approx(1.0)
    assert ens.stderr["m"][1] == 0.0
    assert ens.n_seeds == 2
    assert np.array_equal(aggregate([_rec(0, [1.0])]).stderr["m"], [0.0])


def test_aggregate_permutation_invariant():
    rng = np.random.default_rng(0)
    recs = [_rec(s, rng.random(30) * 10.0 ** rng.integers(-5, 5)) for s in range(20)]
    base = aggregate(recs)
    for _ in range(5):
        perm = [recs[i] for i in rng.permutation(20)]
        ens = aggregate(perm)
        assert ens.mean["m"].tobytes() == base.mean["m"].tobytes()
        assert ens.stderr["m"].tobytes() == base.stderr["m"].tobytes()


def test_aggregate_mismatches():
    with pytest.raises(UsageError):
        aggregate([])
    with pytest.raises(LayoutError):
        aggregate([_rec(0, [1.0, 2.0]), _rec(1, [1.0, 2.0], grid=[0, 2])])
    with pytest.raises(LayoutError):
        aggregate([_rec(0, [1.0]), _rec(1, [1.0], schedule={"kind": "y"})])


def test_fit_rate_range_and_missing_metric():
    grid = log_grid(10**4)
    rec = RunRecord(0, {}, grid, {"m": np.where(grid > 0, 10.0 / np.maximum(grid, 1), 10.0)})
    ens = aggregate([rec])
    assert fit_rate(ens, "m").slope == pytest.approx(-1.0, abs=1e-12)
    assert fit_rate(ens, "m", (10, 1000)).n_points == 21
    with pytest.raises(DataError):
        fit_rate(ens, "other")


def test_record_check():
    _rec(0, [1.0, 2.0]).check()
    with pytest.raises(DataError):
        _rec(0, [1.0, -2.0]).check()
    with pytest.raises(DataError):
        _rec(0, [1.0, 2.0], grid=[1, 1]).check()


def test_dist_to_halfspace():
    spec = FeasibleSpec(BlockLayout.single(2), [HardSet.full(2)], [[SoftConstraint.affine([1.0, 0.0], 1.0)]])
    assert dist_to_feasible_sq(spec, np.array([3.0, 7.0])) == pytest.approx(4.0)
    assert dist_to_feasible_sq(spec, np.array([0.0, 7.0])) == 0.0


def test_dist_dykstra_matches_qp():
    rng = np.random.default_rng(2)
    G = rng.normal(size=(5, 3))
    h = rng.random(5) + 0.1
    spec = FeasibleSpec(BlockLayout.single(3), [HardSet.full(3)],
                        [[SoftConstraint.affine(G[i], h[i]) for i in range(5)]])
    for _ in range(10):
        x = rng.normal(size=3) * 4
        exact = np.sum((x - project_polytope_exact(x, G, h)) ** 2)
        assert dist_to_feasible_sq(spec, x) == pytest.approx(exact, abs=1e-8)


def test_B_sigma_rademacher():
    n = 4
    prob = AffineProblem(np.zeros((n, n)), np.zeros(n), noise="rademacher", noise_level=1.0)
    est = estimate_B_and_sigma(prob, np.zeros(n), n_samples=1000)
    # every draw has squared norm exactly n
    assert est["sigma"] ** 2 == pytest.approx(n)
    assert est["B"] ** 2 == pytest.approx(n)


def test_B_sigma_with_mean():
    prob = AffineProblem(np.eye(2), np.array([3.0, 4.0]), noise="uniform", noise_level=0.5)
    est = estimate_B_and_sigma(prob, np.zeros(2), n_samples=20_000, seed=1)
    sigma2 = 2 * 0.25 / 3
    assert est["sigma"] ** 2 == pytest.approx(sigma2, rel=0.05)
    assert est["B"] ** 2 == pytest.approx(25 + sigma2, rel=0.01)
    with pytest.raises(UsageError):
        estimate_B_and_sigma(prob, np.zeros(2), n_samples=10)


def test_first_hit():
    grid = np.array([0, 1, 10, 100])
    assert first_hit(grid, [5.0, 3.0, 0.5, 0.1], 1.0) == 10
    assert first_hit(grid, [5.0, 3.0, 2.0, 2.0], 1.0) is None
    assert first_hit(grid, [0.0, 3.0, 2.0, 2.0], np.inf) == 0
