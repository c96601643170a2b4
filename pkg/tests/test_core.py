import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sviproj.core import (AffineProblem, BlockLayout, BlockVector, RngStream, SolutionSpec, block_scale,
                          control_stream_id, linear_combine, noise_stream_id)
from sviproj.errors import LayoutError, UsageError


def test_layout_basics():
    lay = BlockLayout((2, 1, 3))
    assert lay.m == 3 and lay.n == 6
    assert lay.offsets == (0, 2, 3, 6)
    assert lay.slice(2) == slice(3, 6)
    assert lay.block_index().tolist() == [0, 0, 1, 2, 2, 2]
    with pytest.raises(LayoutError):
        BlockLayout((2, 0))


def test_linear_combine_examples():
    p = BlockVector([2.0, 3.0])
    assert linear_combine([1], [p]) == p
    mid = linear_combine([0.5, 0.5], [BlockVector([0.0, 0.0]), BlockVector([2.0, 4.0])])
    assert np.array_equal(mid.data, [1.0, 2.0])
    pts = [BlockVector([1.0, 1.0]), BlockVector([1.0, 0.0]), BlockVector([0.0, 3.0])]
    assert np.array_equal(linear_combine([1, -1, 2], pts).data, [0.0, 7.0])


def test_linear_combine_errors():
    with pytest.raises(UsageError):
        linear_combine([], [])
    with pytest.raises(UsageError):
        linear_combine([1, 2], [BlockVector([1.0])])
    with pytest.raises(LayoutError):
        linear_combine([1, 1], [BlockVector([1.0, 2.0]), BlockVector.from_blocks([[1.0], [2.0]])])


def test_block_scale_examples():
    assert np.array_equal(block_scale([2], BlockVector([1.0, 3.0])).data, [2.0, 6.0])
    x = BlockVector.from_blocks([[1.0], [2.0]])
    assert block_scale([1, 1], x) == x
    y = block_scale([2, 3], BlockVector.from_blocks([[1.0], [-1.0]]))
    assert np.array_equal(y.data, [2.0, -3.0])
    with pytest.raises(UsageError):
        block_scale([1], x)
    with pytest.raises(UsageError):
        block_scale([1, 0], x)


def test_blockvector_immutable_and_inner():
    x = BlockVector.from_blocks([[1.0, 2.0], [3.0]])
    with pytest.raises(ValueError):
        x.data[0] = 5.0
    assert x.inner(x) == pytest.approx(14.0)
    assert (x - x).norm() == 0.0
    assert hash(x) == hash(BlockVector.from_blocks([[1.0, 2.0], [3.0]]))
    with pytest.raises(LayoutError):
        x.inner(BlockVector([1.0, 2.0, 3.0]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6), st.floats(-10, 10))
def test_blockvector_linear_ops(vals, c):
    x = BlockVector(vals)
    assert np.allclose((c * x + x).data, (c + 1) * np.array(vals))
    assert (-x).inner(x) == pytest.approx(-x.norm() ** 2, rel=1e-12, abs=1e-9)


def test_rng_streams_deterministic_and_distinct():
    a = RngStream(5, noise_stream_id(0)).random(8)
    b = RngStream(5, noise_stream_id(0)).random(8)
    c = RngStream(5, control_stream_id(0)).random(8)
    d = RngStream(6, noise_stream_id(0)).random(8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)
    assert noise_stream_id(3) == 6 and control_stream_id(3) == 7


def test_rng_counter_advances():
    r = RngStream(1)
    c0 = r.counter
    r.random(8)
    assert r.counter == c0 + 2
    with pytest.raises(UsageError):
        RngStream(-1)


def test_affine_problem_noise_and_constants():
    A = np.array([[1.0, 0.0], [0.0, 2.0]])
    p = AffineProblem(A, [1.0, 0.0], noise="rademacher", noise_level=0.5)
    assert p.lipschitz_L == pytest.approx(2.0)
    assert p.variance_bound == pytest.approx(0.25 * 2)
    u = p.draw_noise(0, RngStream(0), 1000)
    assert set(np.unique(u)) == {-1.0, 1.0}
    assert np.array_equal(p.mean_operator(np.ones(2)), [2.0, 2.0])
    assert not p.is_skew
    assert AffineProblem([[0.0, -1.0], [1.0, 0.0]], [0.0, 0.0]).is_skew
    with pytest.raises(UsageError):
        AffineProblem(A, [1.0, 0.0], noise="gauss")


def test_affine_problem_blockwise_sample():
    lay = BlockLayout((1, 1))
    p = AffineProblem([[0.0, -1.0], [1.0, 0.0]], [0.0, 0.0], lay, noise="uniform", noise_level=0.0)
    s = p.sample([RngStream(0, 0), RngStream(0, 2)])
    assert np.array_equal(s.evaluate(np.array([1.0, 2.0])), [-2.0, 1.0])
    assert np.array_equal(s.evaluate_block(1, np.array([1.0, 2.0])), [1.0])


def test_solution_spec_segment():
    sol = SolutionSpec.segment([1.0, 1.0], [2.0, 2.0])
    assert np.allclose(sol.least_norm_solution, [1.0, 1.0])
    # (2, 0) lands on (1, 1); (2, 1) is the point whose projection is the midpoint
    assert np.allclose(sol.project_onto_solution_set(np.array([2.0, 0.0])), [1.0, 1.0])
    assert np.allclose(sol.project_onto_solution_set(np.array([2.0, 1.0])), [1.5, 1.5])
    assert np.allclose(sol.project_onto_solution_set(np.array([5.0, 5.0])), [2.0, 2.0])
    assert sol.distance(np.array([1.0, 1.0])) == 0.0
    for t in np.linspace(1.01, 2.0, 20):
        assert np.linalg.norm([1.0, 1.0]) < np.linalg.norm([t, t])


def test_solution_spec_point():
    sol = SolutionSpec.point([0.0, 1.0], sharpness_rho=0.5)
    assert sol.distance(np.array([3.0, 5.0])) == pytest.approx(5.0)
    assert sol.sharpness_rho == 0.5
