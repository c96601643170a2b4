import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sviproj.core import BlockLayout, BlockVector
from sviproj.errors import InternalError, UsageError
from sviproj.oracles import project_polytope_exact
from sviproj.projections import (ControlSequence, FeasibleSpec, HardSet, SoftConstraint, check_feasstep_inequality,
                                 dykstra_project, feasibility_step, project_simplex)

vec = st.lists(st.floats(-50, 50), min_size=3, max_size=3).map(np.array)


def test_hard_set_examples():
    assert np.allclose(HardSet.ball([0.0, 0.0], 1.0).project(np.array([3.0, 0.0])), [1.0, 0.0])
    assert np.allclose(HardSet.halfspace([1.0, 0.0], 0.0).project(np.array([2.0, 3.0])), [0.0, 3.0])
    assert np.allclose(HardSet.box([0.0, 0.0], [1.0, 1.0]).project(np.array([-1.0, 0.5])), [0.0, 0.5])


def test_hard_set_affine_and_simplex():
    aff = HardSet.affine([[1.0, 1.0]], [1.0])
    assert np.allclose(aff.project(np.array([1.0, 1.0])), [0.5, 0.5])
    simp = HardSet.simplex(3)
    assert np.allclose(simp.project(np.array([0.2, 0.2, 0.2])), [1 / 3, 1 / 3, 1 / 3])
    with pytest.raises(UsageError):
        HardSet.affine([[1.0], [1.0]], [0.0, 1.0])


def test_project_blockvector_keeps_type():
    x = BlockVector([3.0, 0.0])
    out = HardSet.ball([0.0, 0.0], 1.0).project(x)
    assert isinstance(out, BlockVector)


@settings(max_examples=60, deadline=None)
@given(vec)
def test_projections_idempotent(x):
    sets = [HardSet.box([-1.0, 0.0, 2.0], [1.0, 1.0, 3.0]), HardSet.ball([1.0, 0.0, 0.0], 2.0),
            HardSet.halfspace([1.0, -2.0, 0.5], 1.0), HardSet.simplex(3, 2.0), HardSet.affine([[1.0, 2.0, 3.0]], [1.0])]
    for s in sets:
        p = s.project(x)
        assert s.contains(p, 1e-10)
        assert np.allclose(s.project(p), p, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(vec)
def test_simplex_projection_matches_qp(x):
    G = np.vstack([-np.eye(3), np.ones((1, 3)), -np.ones((1, 3))])
    h = np.array([0.0, 0.0, 0.0, 1.0, -1.0])
    assert np.allclose(project_simplex(x), project_polytope_exact(x, G, h), atol=1e-8)


def test_feasibility_step_examples():
    g = SoftConstraint.affine([1.0, 0.0], 0.0)
    full = HardSet.full(2)
    assert np.allclose(feasibility_step(np.array([2.0, 0.0]), g, 1.0, full), [0.0, 0.0])
    for beta in (0.3, 1.0, 1.7):
        assert np.array_equal(feasibility_step(np.array([-1.0, 5.0]), g, beta, full), [-1.0, 5.0])
    assert np.allclose(feasibility_step(np.array([2.0, 0.0]), g, 0.5, full), [1.0, 0.0])
    with pytest.raises(UsageError):
        feasibility_step(np.array([2.0, 0.0]), g, 2.0, full)


def test_feasibility_step_distance_constraint():
    g = SoftConstraint.distance(HardSet.ball([0.0, 0.0], 1.0))
    out = feasibility_step(np.array([3.0, 0.0]), g, 1.0, HardSet.full(2))
    assert np.allclose(out, [1.0, 0.0])
    assert g.subgrad_bound == 1.0


def test_soft_constraint_halfspace_forms():
    g = SoftConstraint.distance(HardSet.halfspace([3.0, 4.0], 10.0))
    a, b = g.as_halfspace()
    assert np.allclose(a, [0.6, 0.8]) and b == pytest.approx(2.0)
    assert SoftConstraint.distance(HardSet.ball([0.0], 1.0)).as_halfspace() is None
    x = np.array([5.0, 5.0])
    assert g.positive_part(x) == pytest.approx(max(a @ x - b, 0.0))


def test_feasstep_stationary_case():
    g = SoftConstraint.affine([1.0, 0.0], 1.0)
    x0 = np.array([0.0, 0.0])
    res = check_feasstep_inequality(x0, np.zeros(2), x0, g, 0.7, 1.0, 1.5, HardSet.full(2))
    assert res.lhs == 0.0 and res.rhs == 0.0 and res.holds


def test_feasstep_random_2d():
    rng = np.random.default_rng(3)
    g = SoftConstraint.affine([1.0, 2.0], 0.5)
    hard = HardSet.box([-3.0, -3.0], [3.0, 3.0])
    x0 = np.array([-1.0, -1.0])
    for _ in range(200):
        x1 = hard.project(rng.normal(size=2) * 2)
        res = check_feasstep_inequality(x1, rng.normal(size=2), x0, g, 0.3, 1.5, 2.0, hard)
        assert res.holds


def test_feasstep_preconditions():
    g = SoftConstraint.affine([1.0], 0.0)
    with pytest.raises(UsageError):
        check_feasstep_inequality([1.0], [0.0], [-1.0], g, 0.1, 1.0, 1.0, HardSet.full(1))
    with pytest.raises(UsageError):
        check_feasstep_inequality([1.0], [0.0], [1.0], g, 0.1, 1.0, 1.5, HardSet.full(1))


def test_dykstra_examples():
    h1 = HardSet.halfspace([1.0, 0.0], 0.0)
    h2 = HardSet.halfspace([0.0, 1.0], 0.0)
    assert np.allclose(dykstra_project([h1], np.array([1.0, 1.0])), [0.0, 1.0])
    assert np.allclose(dykstra_project([h1, h2], np.array([1.0, 1.0])), [0.0, 0.0], atol=1e-9)


def test_dykstra_random_halfspaces_vs_qp():
    rng = np.random.default_rng(11)
    for _ in range(20):
        G = rng.normal(size=(3, 3))
        h = rng.random(3)
        x = rng.normal(size=3) * 3
        sets = [HardSet.halfspace(G[i], h[i]) for i in range(3)]
        assert np.allclose(dykstra_project(sets, x), project_polytope_exact(x, G, h), atol=1e-8)


def test_dykstra_generic_sets():
    # ball and halfspace are not a polyhedron: the generic path runs
    ball = HardSet.ball([0.0, 0.0], 1.0)
    half = HardSet.halfspace([1.0, 0.0], 0.5)
    out = dykstra_project([ball, half], np.array([2.0, 0.0]))
    assert np.allclose(out, [0.5, 0.0], atol=1e-8)


def test_feasible_spec_projection_and_box():
    lay = BlockLayout((1, 1))
    faces = [[SoftConstraint.affine([-1.0], 1.0), SoftConstraint.affine([1.0], 1.0)]] * 2
    spec = FeasibleSpec(lay, [HardSet.full(1)] * 2, faces, feasible_box=([-1.0, -1.0], [1.0, 1.0]))
    assert np.allclose(spec.feasible_projection(np.array([3.0, -0.5])), [1.0, -0.5])
    assert spec.num_constraints == 4
    assert spec.max_violation(np.array([3.0, -0.5])) == pytest.approx(2.0)
    lo, hi, G, h, block = spec.polyhedral_data()
    assert G.shape == (4, 2) and block.tolist() == [0, 0, 1, 1]
    plain = FeasibleSpec(lay, [HardSet.full(1)] * 2, faces)
    assert np.allclose(plain.feasible_projection(np.array([3.0, -0.5])), [1.0, -0.5], atol=1e-9)


def test_control_sequence():
    lay = BlockLayout.single(1)
    cons = [SoftConstraint.affine([1.0], float(i)) for i in range(4)]
    spec = FeasibleSpec(lay, [HardSet.full(1)], [cons])
    ctl = ControlSequence(spec, union_probs=[0.1, 0.2, 0.3, 0.4])
    assert ctl.draw_union(0.05) == (0, 0)
    assert ctl.draw_union(0.95) == (0, 3)
    assert ctl.min_probability() == pytest.approx(0.1)
    with pytest.raises(UsageError):
        ControlSequence(spec, union_probs=[0.5, 0.5, 0.5, -0.5])


def test_feasibility_step_zero_subgradient_raises():
    # a distance constraint evaluated at a positive value always has a unit subgradient,
    # so an InternalError needs an inconsistent custom constraint
    g = SoftConstraint("affine", 1, a=np.array([0.0]), b=-1.0)
    with pytest.raises(InternalError):
        feasibility_step(np.array([0.0]), g, 1.0, HardSet.full(1))
