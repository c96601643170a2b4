import numpy as np
import pytest

from sviproj.core import RngStream, noise_stream_id
from sviproj.errors import UsageError
from sviproj.metrics import dist_to_feasible_sq
from sviproj.problems import get_problem, make_rotation_cartesian, make_segment_solution_affine, make_weak_sharp_lp


@pytest.fixture(scope="module")
def lp():
    return make_weak_sharp_lp(noise_level=1.0, seed=0)


def test_simplex_lp():
    e = make_weak_sharp_lp(kind="simplex")
    assert e.constants["rho"] == pytest.approx(1 / np.sqrt(2))
    assert e.solution.distance(np.array([1.0, 0.0, 0.0])) == 0.0
    assert e.solution.distance(np.array([0.0, 1.0, 0.0])) == pytest.approx(np.sqrt(2))


def test_weak_sharpness_sweep(lp):
    rng = np.random.default_rng(1)
    V = lp.vertices
    cost = np.array(lp.constants["cost"])
    xs = V[np.argmin(V @ cost)]
    rho = lp.constants["rho"]
    assert rho >= 0.05
    W = rng.dirichlet(np.ones(len(V)) * 0.3, size=1000)
    for x in W @ V:
        assert cost @ (x - xs) >= rho * np.linalg.norm(x - xs) - 1e-12


def test_lp_points_are_vertices(lp):
    G, h = lp.constants["halfspaces"]
    assert np.all(lp.vertices @ G.T <= h + 1e-9)
    assert lp.constants["L"] == 0.0
    assert lp.constants["c"] == pytest.approx(lp.constants["eta"] * len(h))


def test_lipschitz_constants():
    assert make_segment_solution_affine().problem.lipschitz_L == pytest.approx(2.0)
    assert make_rotation_cartesian().problem.lipschitz_L == pytest.approx(1.0)


@pytest.mark.parametrize("factory", [make_rotation_cartesian, make_segment_solution_affine])
def test_unbiased_noise(factory):
    e = factory(noise_level=0.8)
    prob, lay = e.problem, e.problem.layout
    x = e.x0
    n_draws = 20_000
    F = np.zeros((n_draws, lay.n))
    for j in range(lay.m):
        draws = prob.draw_noise(j, RngStream(7, noise_stream_id(j)), n_draws)
        F[:, lay.slice(j)] = [prob.evaluate_block(j, v, x) for v in draws]
    se = F.std(axis=0, ddof=1) / np.sqrt(n_draws)
    assert np.all(np.abs(F.mean(axis=0) - prob.mean_operator(x)) <= 4 * se + 1e-12)


def _regularity_holds(e, points):
    lay = e.spec.layout
    for x in points:
        lhs = dist_to_feasible_sq(e.spec, x)
        rhs = 0.0
        for j in range(lay.m):
            cons = e.spec.soft[j]
            mean_sq = np.mean([g.positive_part(x[lay.slice(j)]) ** 2 / g.subgrad_bound**2 for g in cons])
            rhs += e.spec.regularity_c[j] * mean_sq
        if lhs > rhs * (1 + 1e-9) + 1e-12:
            return False
    return True


def test_regularity_rotation_segment():
    rng = np.random.default_rng(3)
    for e in (make_rotation_cartesian(), make_segment_solution_affine(), make_segment_solution_affine(m=1)):
        assert _regularity_holds(e, rng.normal(size=(1000, 2)) * 4)


def test_regularity_lp_fresh_points(lp):
    rng = np.random.default_rng(9)
    V = lp.vertices
    pts = V[rng.integers(0, len(V), 300)] + rng.normal(size=(300, V.shape[1])) * rng.uniform(0.01, 3, (300, 1))
    assert _regularity_holds(lp, pts)


def test_lp_determinism():
    a = make_weak_sharp_lp(noise_level=1.0, seed=4)
    b = make_weak_sharp_lp(noise_level=1.0, seed=4)
    c = make_weak_sharp_lp(noise_level=1.0, seed=5)
    assert np.array_equal(a.vertices, b.vertices)
    assert a.constants["eta"] == b.constants["eta"]
    assert not np.array_equal(a.constants["cost"], c.constants["cost"])


def test_tags_and_registry():
    assert "weak-sharp" in make_weak_sharp_lp(kind="simplex").tags
    assert "unbounded-set" not in make_weak_sharp_lp(kind="simplex", hard="box").tags
    assert {"plain-monotone", "cartesian(2)"} <= make_rotation_cartesian().tags
    assert "cartesian(1)" in make_segment_solution_affine(m=1).tags
    assert get_problem("segment", m="1").spec.layout.m == 1
    with pytest.raises(UsageError):
        get_problem("nope")
    with pytest.raises(UsageError):
        get_problem("rotation", n=3)
    with pytest.raises(UsageError):
        make_segment_solution_affine(m=3)
    with pytest.raises(UsageError):
        make_weak_sharp_lp(kind="other")
