"""Shipped test problems whose solution sets are known exactly."""
from dataclasses import dataclass, field

import numpy as np

from .core import AffineProblem, BlockLayout, SolutionSpec
from .errors import GenerationError, UsageError
from .oracles import enumerate_vertices
from .projections import FeasibleSpec, HardSet, SoftConstraint

__all__ = [
    "ProblemCatalogEntry",
    "make_weak_sharp_lp",
    "make_rotation_cartesian",
    "make_segment_solution_affine",
    "estimate_eta",
    "PROBLEMS",
    "get_problem",
]


@dataclass
class ProblemCatalogEntry:
    """A problem with its feasible set, solution set and assumption tags.

    Attributes
    ----------
    name : str
    problem : AffineProblem
    spec : FeasibleSpec
    solution : SolutionSpec
    tags : frozenset of str
        Subset of {"weak-sharp", "paramonotone", "plain-monotone",
        "bounded-operator", "unbounded-set", "cartesian(m)"}.
    noise : dict
        Noise model descriptor (kind and level).
    x0 : ndarray
        Default starting point (in the hard set).
    vertices : ndarray, optional
        Vertices of X when it is a polytope.
    constants : dict
        Known constants (L, rho, eta, c, ...).
    """

    name: str
    problem: AffineProblem
    spec: FeasibleSpec
    solution: SolutionSpec
    tags: frozenset
    noise: dict
    x0: np.ndarray
    vertices: np.ndarray = None
    constants: dict = field(default_factory=dict)


def _soft(a, b, kind):
    a = np.asarray(a, dtype=np.float64)
    na = float(np.linalg.norm(a))
    if kind == "affine":
        return SoftConstraint.affine(a / na, b / na)
    if kind == "distance":
        return SoftConstraint.distance(HardSet.halfspace(a, b))
    raise UsageError("soft constraint kind must be 'affine' or 'distance'")


def estimate_eta(spec, points, margin=1.25):
    """Sampled linear-regularity constant eta with
    dist(x, X)^2 <= eta max_i dist(x, X_i)^2, times a safety ``margin``.

    Points where every constraint holds are skipped.
    """
    worst = 1.0
    n = spec.layout.n
    for x in points:
        viol = 0.0
        for j, _, g in spec.constraints():
            viol = max(viol, g.positive_part(x[spec.layout.slice(j)]) ** 2 / g.subgrad_bound**2)
        if viol <= 1e-14:
            continue
        d = float(np.sum((x - np.asarray(spec.feasible_projection(x.reshape(n)))) ** 2))
        worst = max(worst, d / viol)
    return margin * worst


def _lp_polytope(n, rng, pert):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    G = np.vstack([np.eye(n), -np.eye(n)]) @ Q.T + pert * rng.normal(size=(2 * n, n))
    G /= np.linalg.norm(G, axis=1, keepdims=True)
    return G, np.ones(2 * n)


def make_weak_sharp_lp(n=5, num_halfspaces=None, noise_level=0.0, seed=0, kind="random", hard="full",
                       soft="distance", noise="uniform", min_rho=0.05, eta_samples=2000):
    """Linear stochastic program: F(v, x) = c + level v over a polytope.

    ``kind="random"`` perturbs a randomly rotated cube: 2n unit-normal
    halfspaces <a_i, x> <= 1 with normals jittered by N(0, 0.3^2), and a
    random unit cost c. The draw is repeated until the optimal vertex is
    unique and rho >= ``min_rho``. ``kind="simplex"`` gives the standard
    simplex in R^3 with c = (0, 1, 1).

    Parameters
    ----------
    n : int
    num_halfspaces : int, optional
        Must equal 2n for ``kind="random"`` (the default).
    hard : {"full", "box"}
        X_0 = R^n, or a box of twice the polytope's extent.
    soft : {"distance", "affine"}
        How each halfspace is presented to the solver.

    Returns
    -------
    ProblemCatalogEntry
        X* = {optimal vertex}; rho is the smallest normalized optimality
        gap over the other vertices; c (sampling constant) = eta |I| with
        eta estimated by sampling.
    """
    rng = np.random.default_rng(seed)
    if kind == "simplex":
        n = 3
        G = np.vstack([-np.eye(3), np.ones((1, 3)), -np.ones((1, 3))])
        h = np.array([0.0, 0.0, 0.0, 1.0, -1.0])
        cost = np.array([0.0, 1.0, 1.0])
        V = np.eye(3)
    elif kind == "random":
        if num_halfspaces not in (None, 2 * n):
            raise UsageError("random LPs use 2n halfspaces")
        for _ in range(100):
            G, h = _lp_polytope(n, rng, 0.3)
            V = enumerate_vertices(G, h)
            cost = rng.normal(size=n)
            cost /= np.linalg.norm(cost)
            if len(V) < n + 1:
                continue
            vals = V @ cost
            order = np.argsort(vals)
            if vals[order[1]] - vals[order[0]] > 1e-6:
                xs = V[order[0]]
                others = np.delete(V, order[0], axis=0) - xs
                rho = float(np.min(others @ cost / np.linalg.norm(others, axis=1)))
                if rho >= min_rho:
                    break
        else:
            raise GenerationError("no nondegenerate LP after 100 draws")
    else:
        raise UsageError("kind must be 'random' or 'simplex'")
    vals = V @ cost
    i_opt = int(np.argmin(vals))
    xs = V[i_opt]
    others = np.delete(V, i_opt, axis=0) - xs
    rho = float(np.min(others @ cost / np.linalg.norm(others, axis=1)))
    layout = BlockLayout.single(n)
    if hard == "full":
        X0 = HardSet.full(n)
    elif hard == "box":
        R = 2.0 * float(np.abs(V).max())
        X0 = HardSet.box(-R * np.ones(n), R * np.ones(n))
    else:
        raise UsageError("hard must be 'full' or 'box'")
    constraints = [_soft(G[i], h[i], soft) for i in range(len(h))]
    spec = FeasibleSpec(layout, [X0], [constraints])
    # eta from points around X at several scales
    span = float(np.ptp(V, axis=0).max())
    centers = V[rng.integers(0, len(V), eta_samples)]
    scales = span * 10.0 ** rng.uniform(-2, 1, eta_samples)
    pts = centers + scales[:, None] * rng.normal(size=(eta_samples, n))
    pts = np.array([X0._project(p) for p in pts])
    eta = estimate_eta(spec, pts)
    c_reg = eta * len(h)
    spec = FeasibleSpec(layout, [X0], [constraints], regularity_c=[c_reg], eta=eta)
    problem = AffineProblem(np.zeros((n, n)), cost, layout, noise, noise_level,
                            SolutionSpec.point(xs, rho))
    tags = {"weak-sharp", "bounded-operator", "cartesian(1)"}
    if hard == "full":
        tags.add("unbounded-set")
    return ProblemCatalogEntry(
        name="weak_sharp_lp",
        problem=problem,
        spec=spec,
        solution=problem.solution,
        tags=frozenset(tags),
        noise={"kind": noise, "level": float(noise_level)},
        x0=np.zeros(n),
        vertices=V,
        constants={"rho": rho, "eta": eta, "c": c_reg, "L": 0.0, "num_constraints": len(h),
                   "cost": cost.tolist(), "halfspaces": (G, h)},
    )


def _box_faces(lo, hi):
    """Soft constraints -x <= -lo and x <= hi for a scalar coordinate."""
    return [SoftConstraint.affine([-1.0], -lo), SoftConstraint.affine([1.0], hi)]


def make_rotation_cartesian(noise_level=0.0, noise="uniform"):
    """T(x) = (-x_2, x_1) split between two agents over X = [-1, 1]^2.

    Each agent has X_0^j = R and the two box faces as soft constraints, so
    c^j = 2 (exactly one face can be violated, drawn with probability 1/2).
    """
    layout = BlockLayout((1, 1))
    A = np.array([[0.0, -1.0], [1.0, 0.0]])
    lo, hi = -np.ones(2), np.ones(2)
    spec = FeasibleSpec(layout, [HardSet.full(1), HardSet.full(1)],
                        [_box_faces(-1.0, 1.0), _box_faces(-1.0, 1.0)],
                        regularity_c=[2.0, 2.0], eta=1.0, feasible_box=(lo, hi))
    solution = SolutionSpec.point(np.zeros(2))
    problem = AffineProblem(A, np.zeros(2), layout, noise, noise_level, solution)
    return ProblemCatalogEntry(
        name="rotation",
        problem=problem,
        spec=spec,
        solution=solution,
        tags=frozenset({"plain-monotone", "cartesian(2)"}),
        noise={"kind": noise, "level": float(noise_level)},
        x0=np.array([0.9, 0.6]),
        vertices=np.array([[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]]),
        constants={"L": 1.0, "diam": 2.0 * np.sqrt(2.0)},
    )


def make_segment_solution_affine(noise_level=0.0, m=2, noise="uniform"):
    """T(x) = (x_1 - x_2, x_2 - x_1) over X = [1, 2] x [-2, 2].

    X* is the segment from (1, 1) to (2, 2) with least-norm point (1, 1).
    With ``m=2`` each coordinate is an agent with its two interval ends as
    soft constraints (c^j = 2); with ``m=1`` one agent samples among all
    four (dist^2 = sum of squared violations, so c = 4).
    """
    A = np.array([[1.0, -1.0], [-1.0, 1.0]])
    lo, hi = np.array([1.0, -2.0]), np.array([2.0, 2.0])
    if m == 2:
        layout = BlockLayout((1, 1))
        hard = [HardSet.full(1), HardSet.full(1)]
        soft = [_box_faces(1.0, 2.0), _box_faces(-2.0, 2.0)]
        creg = [2.0, 2.0]
    elif m == 1:
        layout = BlockLayout.single(2)
        hard = [HardSet.full(2)]
        soft = [[SoftConstraint.affine([-1.0, 0.0], -1.0), SoftConstraint.affine([1.0, 0.0], 2.0),
                 SoftConstraint.affine([0.0, -1.0], 2.0), SoftConstraint.affine([0.0, 1.0], 2.0)]]
        creg = [4.0]
    else:
        raise UsageError("m must be 1 or 2")
    spec = FeasibleSpec(layout, hard, soft, regularity_c=creg, eta=1.0, feasible_box=(lo, hi))
    solution = SolutionSpec.segment([1.0, 1.0], [2.0, 2.0], least_norm=np.array([1.0, 1.0]))
    problem = AffineProblem(A, np.zeros(2), layout, noise, noise_level, solution)
    return ProblemCatalogEntry(
        name="segment",
        problem=problem,
        spec=spec,
        solution=solution,
        tags=frozenset({"paramonotone", f"cartesian({m})"}),
        noise={"kind": noise, "level": float(noise_level)},
        x0=np.array([2.0, -2.0]),
        vertices=np.array([[1.0, -2.0], [1.0, 2.0], [2.0, -2.0], [2.0, 2.0]]),
        constants={"L": 2.0, "diam": float(np.hypot(1.0, 4.0))},
    )


# name -> (factory, {parameter: type})
PROBLEMS = {
    "weak_sharp_lp": (make_weak_sharp_lp, {"n": int, "noise_level": float, "seed": int, "kind": str,
                                           "hard": str, "soft": str, "noise": str, "min_rho": float}),
    "rotation": (make_rotation_cartesian, {"noise_level": float, "noise": str}),
    "segment": (make_segment_solution_affine, {"noise_level": float, "m": int, "noise": str}),
}


def get_problem(name, **params):
    """Build a catalog entry by name with typed keyword parameters."""
    if name not in PROBLEMS:
        raise UsageError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}")
    factory, types = PROBLEMS[name]
    unknown = set(params) - set(types)
    if unknown:
        raise UsageError(f"unknown parameters for {name}: {sorted(unknown)}")
    return factory(**{k: types[k](v) for k, v in params.items()})
