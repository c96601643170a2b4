import numpy as np
import pytest

from sviproj.core import AffineProblem, BlockLayout
from sviproj.errors import ConfigurationError, UsageError
from sviproj.problems import make_rotation_cartesian, make_segment_solution_affine
from sviproj.projections import ControlSequence, FeasibleSpec, HardSet
from sviproj.solver_tyk import (TykRateConstants, TykSchedule, TykState, check_strong_monotonicity, run_tyk,
                                sigma_k, tyk_rate_bounds, tyk_step, validate_tyk_assumptions)
from sviproj.solver_ws import WsSchedule


def _two_agent_constant():
    return TykSchedule.custom(2, lambda k: [0.1, 0.2], lambda k: [0.5, 1.0])


def test_asynchronous_schedule_values():
    sch = TykSchedule.asynchronous(0.25, [1.0, 4.0], [1.0, 1.0])
    assert np.allclose(sch.alpha(0), [1.0, 4.0**-0.75])
    assert np.allclose(sch.eps(3), [4.0**-0.25, 4.0**-0.25])
    assert sch.alphas(0, 5).shape == (5, 2)
    assert np.array_equal(sch.epss(-1, 0)[0], sch.eps(0))


def test_derived_quantities():
    sch = _two_agent_constant()
    d = sch.derived(0, 3)
    assert np.allclose(d["amin"], 0.1) and np.allclose(d["amax"], 0.2)
    assert np.allclose(d["Delta"], 0.1)
    assert np.allclose(d["Gamma"], 0.5)
    assert np.allclose(d["B"], 1.0)


def test_schedule_configuration_errors():
    with pytest.raises(ConfigurationError):
        TykSchedule.asynchronous(0.6, [1.0], [1.0])
    with pytest.raises(ConfigurationError):
        TykSchedule.asynchronous(0.1, [1.0, 2.0], [1.0])
    with pytest.raises(ConfigurationError):
        TykSchedule.asynchronous(0.1, [0.0], [1.0])
    with pytest.raises(ConfigurationError):
        TykSchedule.asynchronous(0.1, [1.0], [1.0], beta=2.0)


def test_increasing_eps_rejected():
    e = make_rotation_cartesian(0.0)
    sch = TykSchedule.custom(2, lambda k: 0.1, lambda k: 0.1 * (k + 1))
    with pytest.raises(ConfigurationError):
        run_tyk(e.problem, e.spec, sch, k_max=10)
    with pytest.raises(ConfigurationError):
        run_tyk(e.problem, e.spec, TykSchedule.asynchronous(0.1, [1.0], [1.0]), k_max=10)


def test_sigma_examples():
    sch = _two_agent_constant()
    assert sigma_k(sch, 0, 0.0) == pytest.approx(0.05)
    assert sigma_k(sch, 0, 1.0) == pytest.approx(-0.05)
    with pytest.raises(UsageError):
        sigma_k(sch, 0, -1.0)


def test_strong_monotonicity_check():
    lay = BlockLayout((1, 1))
    A = np.array([[0.0, -1.0], [1.0, 0.0]])
    sch = TykSchedule.custom(2, lambda k: 0.1, lambda k: 0.5)
    res = check_strong_monotonicity(A, lay, sch, 0)
    assert res["sigma"] == pytest.approx(0.05)
    assert res["violations"] == 0
    assert res["min_margin"] >= -1e-12


def test_validator_flags():
    rep = validate_tyk_assumptions(TykSchedule.asynchronous(0.1, [1.0, 2.0], [1.0, 3.0]), horizon=10**5)
    assert len(rep["verdicts"]) == 10
    assert rep["eps_ratio_class"] in ("le1", "finite")
    # with a + b = 1 the two Gamma items sit exactly on the 1/k and k^0 borderlines
    rep_eq = validate_tyk_assumptions(TykSchedule.asynchronous(0.1, [1.0], [1.0]), horizon=10**5)
    failed = [i for i, v in enumerate(rep_eq["verdicts"]) if not v["passed"]]
    assert failed == [7, 9]
    assert rep_eq["verdicts"][7]["exponent"] == pytest.approx(-1.0, abs=1e-3)
    assert rep_eq["verdicts"][9]["exponent"] == pytest.approx(0.0, abs=1e-3)
    with pytest.raises(UsageError):
        validate_tyk_assumptions(TykSchedule.asynchronous(0.1, [1.0], [1.0]), horizon=10)


def test_tyk_step_single_agent_example():
    # m = 1, T = 0, eps = 1, alpha = 0.5: x1 = (1 - 0.5) x0
    lay = BlockLayout.single(2)
    spec = FeasibleSpec(lay, [HardSet.full(2)], [[]])
    prob = AffineProblem(np.zeros((2, 2)), np.zeros(2))
    sch = TykSchedule.custom(1, lambda k: 0.5, lambda k: 1.0)
    st = TykState.initial(np.array([2.0, -6.0]), spec, sch, seed=0)
    tyk_step(st, prob, spec, sch, ControlSequence(spec))
    assert np.allclose(st.x, [1.0, -3.0])


def test_tyk_from_ws_matches_ws_first_step():
    e = make_rotation_cartesian(0.0)
    sch = TykSchedule.from_ws(WsSchedule.robust(1.0, 1.0), m=2)
    assert sch.kind == "synchronous"
    assert np.allclose(sch.eps(5), 0.0)
    st = TykState.initial(e.x0, e.spec, sch, seed=0)
    tyk_step(st, e.problem, e.spec, sch, ControlSequence(e.spec))
    # T(x) = (-x2, x1) at x0 = (0.9, 0.6), then clipped to the soft box
    assert np.allclose(st.x, np.clip(e.x0 - np.array([-0.6, 0.9]), -1, 1))


def test_kernel_matches_generic():
    e = make_segment_solution_affine(0.5)
    sch = TykSchedule.asynchronous(0.05, [1.0, 2.0], [1.0, 1.5])
    r1 = run_tyk(e.problem, e.spec, sch, k_max=300, seed=3, x0=e.x0, save_iterates=True)
    r2 = run_tyk(e.problem, e.spec, sch, k_max=300, seed=3, x0=e.x0, save_iterates=True, use_kernel=False)
    assert np.allclose(r1.iterates["x"], r2.iterates["x"], rtol=1e-10, atol=1e-12)
    assert np.allclose(r1.metrics["gap_erg"], r2.metrics["gap_erg"], rtol=1e-8, atol=1e-12)


def test_run_tyk_metrics_and_convergence():
    e = make_segment_solution_affine(0.0)
    sch = TykSchedule.asynchronous(0.05, [1.0, 1.0], [1.0, 1.0])
    rec = run_tyk(e.problem, e.spec, sch, k_max=10**4, seed=0, x0=e.x0)
    assert {"dist_lns", "dist_sol", "feas_sq", "feas_sq_erg", "gap_erg", "S", "Z"} <= set(rec.metrics)
    assert rec.metrics["dist_lns"][-1] < rec.metrics["dist_lns"][0]
    assert np.all(rec.metrics["gap_erg"] >= 0)
    rec.check()


def test_run_tyk_agent_mismatch():
    e = make_rotation_cartesian(0.0)
    with pytest.raises(ConfigurationError):
        run_tyk(e.problem, e.spec, TykSchedule.asynchronous(0.1, [1.0], [1.0]), k_max=5)


def _consts():
    return TykRateConstants(tau=2.0, mu=0.5, L=1.0, C=2.0, C_g=1.0, M_t=1.5, B_t=0.5)


def test_feasibility_bound_by_hand():
    # one agent, constant a and e: Delta = Gamma = 0 and B = 1
    a, e, k, tau, mu, L = 0.1, 0.2, 2, 2.0, 0.5, 1.0
    c = _consts()
    sch = TykSchedule.custom(1, lambda i: a, lambda i: e)
    series = np.array([1.0, 0.5, 0.25])
    H = 4 * (1 + tau)
    q = 1 - 2 * (1 - mu) * a * e + H * (L**2 + e**2) * a**2
    f = np.array([q * (1 + a * e), max(q * (1 + a * e) - 1, 0), max(q * (1 + a * e) - 1, 0)])
    G = 2.0 * 1.0 * tau / (tau - 1)
    I_t = 0.5 + e * 1.5
    J_t = H * (2 * 0.5**2 + e**2 * 1.5**2)
    expect = (2 * G * f @ series + 2 * G * J_t * 3 * a**2 + 4 * G**2 * I_t**2 * 3 * a**2) / 3
    assert tyk_rate_bounds(c, sch, k, "feasibility", series=series) == pytest.approx(expect, rel=1e-12)
    unclipped = tyk_rate_bounds(c, sch, k, "feasibility", series=series, clip=False)
    assert unclipped <= tyk_rate_bounds(c, sch, k, "feasibility", series=series)


def test_rate_bound_errors():
    c = _consts()
    sch = TykSchedule.asynchronous(0.1, [1.0], [1.0])
    with pytest.raises(UsageError):
        tyk_rate_bounds(c, sch, 5, "other")
    with pytest.raises(UsageError):
        tyk_rate_bounds(c, sch, 5, "gap")
    with pytest.raises(UsageError):
        tyk_rate_bounds(c, sch, 5, "feasibility", series=[1.0])
    with pytest.raises(UsageError):
        TykRateConstants(tau=1.0, mu=0.5, L=1.0, C=1.0, C_g=1.0)


def test_gap_bound_ratio_nonincreasing():
    delta = 0.1
    sch = TykSchedule.asynchronous(delta, [1.0, 1.0], [1.0, 1.0])
    c = TykRateConstants(tau=2.0, mu=0.5, L=1.0, C=2.0, C_g=1.0, diam=2 * np.sqrt(2), B_X=1.0, M_X=np.sqrt(2),
                         B_xbar0=1.0, sigma_xbar0=1.0)
    ratios = []
    for k in (10**2, 10**3, 10**4):
        b = tyk_rate_bounds(c, sch, k, "gap")
        ratios.append(b / (k**delta * np.log(k) / np.sqrt(k)))
    assert ratios[0] >= ratios[1] >= ratios[2] > 0


def test_gap_bound_deterministic_skeleton():
    # eps = 0, L = 0 and zero operator constants: q_i = 1, so h_0 = 1 and h_i = 0
    # and the bound is (diam^2 + 2 diam^2) / (2 sum alpha_max)
    sch = TykSchedule.custom(1, lambda i: 0.5 / (i + 1))
    c = TykRateConstants(tau=2.0, mu=0.5, L=0.0, C=1.0, C_g=1.0, diam=2.0, B_X=0.0, M_X=0.0, B_xbar0=0.0,
                         sigma_xbar0=0.0)
    k = 9
    S = sum(0.5 / (i + 1) for i in range(k + 1))
    assert tyk_rate_bounds(c, sch, k, "gap") == pytest.approx(3 * 4.0 / (2 * S), rel=1e-12)
