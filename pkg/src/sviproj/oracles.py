"""Independent high-accuracy references for small instances.

Everything here is exact or solved to a natural residual of 1e-8 and is
meant for checking the stochastic solvers, not for large problems.
"""
import itertools
from dataclasses import dataclass

import numpy as np

from .core import AffineProblem, BlockLayout, RngStream, as_array, noise_stream_id
from .errors import CapabilityError, ConvergenceError, UsageError

__all__ = [
    "extragradient_solve",
    "natural_residual",
    "TykhonovPath",
    "tykhonov_path",
    "gap_value",
    "enumerate_vertices",
    "project_polytope_exact",
    "IdentificationResult",
    "identification_check",
]

# max dimension for face enumeration over a box (3^n faces)
MAX_FACE_DIM = 10


def natural_residual(T, project, x):
    """||x - Pi_X[x - T(x)]||."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.linalg.norm(x - project(x - T(x))))


def extragradient_solve(T, project, x0, alpha, tol=1e-8, cap=1_000_000):
    """Solve VI(T, X) by the deterministic extragradient method.

    Parameters
    ----------
    T : callable
        Monotone, L-Lipschitz operator on flat arrays.
    project : callable
        Exact Euclidean projection onto X.
    x0 : array_like
    alpha : float
        Constant stepsize in (0, 1/L).
    tol : float
        Target natural residual.
    cap : int
        Iteration cap.

    Returns
    -------
    ndarray
        Point with natural residual at most ``tol``.

    Raises
    ------
    ConvergenceError
        When ``cap`` iterations do not reach ``tol``.
    """
    if alpha <= 0:
        raise UsageError("alpha must be positive")
    x = project(np.array(x0, dtype=np.float64))
    res = natural_residual(T, project, x)
    for _ in range(cap):
        if res <= tol:
            return x
        z = project(x - alpha * T(x))
        x = project(x - alpha * T(z))
        res = natural_residual(T, project, x)
    if res <= tol:
        return x
    raise ConvergenceError(f"extragradient stopped at residual {res:.3e}", x, res)


@dataclass
class TykhonovPath:
    """Solutions t^k of the regularized problems VI(T + D(eps_k), X).

    Attributes
    ----------
    k : ndarray of int
    eps : ndarray, shape (len(k), m)
        Regularization of each agent at each k.
    points : ndarray, shape (len(k), n)
    residuals : ndarray
        Natural residual of each point for its regularized operator.
    M_t : float
        max ||t^k|| over the computed points.
    B_t : float or None
        max B(t^k) when the noise variance is known.
    """

    k: np.ndarray
    eps: np.ndarray
    points: np.ndarray
    residuals: np.ndarray
    M_t: float
    B_t: float = None


def tykhonov_path(T, project, schedule, k_list, L, layout=None, x0=None, tol=1e-8, cap=2_000_000,
                  noise_variance=None):
    """Regularized solutions t^k for each k in ``k_list``.

    Each solve is warm-started from the previous point and uses the
    extragradient method with alpha = 0.9/(L + eps_max).

    Parameters
    ----------
    T, project : callable
        Mean operator and exact projection onto X, on flat arrays.
    schedule : TykSchedule
    k_list : sequence of int
    L : float
        Lipschitz constant of T.
    layout : BlockLayout, optional
        Block sizes used to expand per-agent eps; a single block when omitted.
    noise_variance : float, optional
        sigma^2 of the operator noise (constant in x); gives
        B(t) = sqrt(||T(t)||^2 + sigma^2).
    """
    k_list = np.array(sorted(int(k) for k in k_list), dtype=np.int64)
    if k_list.size == 0 or k_list[0] < 0:
        raise UsageError("k_list must hold nonnegative indices")
    eps_rows = np.array([schedule.eps(int(k)) for k in k_list])
    layout = layout or BlockLayout.single(int(np.asarray(project(np.zeros(1)) if x0 is None else x0).size))
    reps = np.array(layout.sizes)
    if eps_rows.shape[1] != layout.m:
        raise UsageError("schedule and layout have different numbers of agents")
    x = np.zeros(layout.n) if x0 is None else np.array(x0, dtype=np.float64)
    points, residuals = [], []
    for row in eps_rows:
        e = np.repeat(row, reps)

        def Te(y, e=e):
            return T(y) + e * y

        x = extragradient_solve(Te, project, x, 0.9 / (L + float(row.max())), tol, cap)
        points.append(x.copy())
        residuals.append(natural_residual(Te, project, x))
    P = np.array(points)
    M_t = float(np.linalg.norm(P, axis=1).max())
    B_t = None
    if noise_variance is not None:
        B_t = float(max(np.sqrt(np.sum(T(p) ** 2) + noise_variance) for p in P))
    return TykhonovPath(k_list, eps_rows, P, np.array(residuals), M_t, B_t)


def _box_of(X):
    if isinstance(X, tuple) and len(X) == 2:
        lo, hi = (np.asarray(v, dtype=np.float64) for v in X)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise CapabilityError("gap needs a compact box")
        return lo, hi
    return None


def _concave_box_max(S, c, const, lo, hi):
    """max over the box of -y'Sy + c'y + const, S symmetric PSD.

    Enumerates faces (each coordinate at lo, at hi or free). A maximizer on
    a face of minimal dimension is the unique stationary point of that face,
    so faces with singular reduced Hessian can be skipped.
    """
    n = c.size
    if n > MAX_FACE_DIM:
        raise CapabilityError(f"face enumeration limited to n <= {MAX_FACE_DIM}")
    best = -np.inf
    for assign in itertools.product((0, 1, 2), repeat=n):
        assign = np.array(assign)
        y = np.where(assign == 0, lo, hi).astype(np.float64)
        free = assign == 2
        if free.any():
            Sff = S[np.ix_(free, free)]
            fixed = ~free
            rhs = c[free] - 2.0 * S[np.ix_(free, fixed)] @ y[fixed]
            if np.linalg.matrix_rank(Sff) < free.sum():
                continue
            yf = np.linalg.solve(2.0 * Sff, rhs)
            if np.any(yf < lo[free] - 1e-12) or np.any(yf > hi[free] + 1e-12):
                continue
            y[free] = yf
        best = max(best, float(-y @ S @ y + c @ y + const))
    return best


def gap_value(problem, X, x):
    """Dual gap G(x) = sup_{y in X} <T(y), x - y> for affine T(y) = A y + b.

    Parameters
    ----------
    problem : AffineProblem
    X : tuple (lo, hi) or ndarray of vertices, shape (p, n)
        A compact box, or a polytope given by its vertices (only when the
        symmetric part of A vanishes, so that the objective is linear).
    x : array_like

    Raises
    ------
    CapabilityError
        For non-affine operators, unbounded sets or a nonlinear objective
        over a vertex-described polytope.
    """
    if not isinstance(problem, AffineProblem):
        raise CapabilityError("gap oracle supports affine operators only")
    A, b = problem.A, problem.b
    x = as_array(x)
    S = 0.5 * (A + A.T)
    # <A y + b, x - y> = -y'Sy + (A'x - b)'y + b'x
    c = A.T @ x - b
    const = float(b @ x)
    linear = bool(np.allclose(S, 0.0, atol=1e-14))
    box = _box_of(X)
    if box is not None:
        lo, hi = box
        if linear:
            return float(np.sum(np.maximum(c * lo, c * hi)) + const)
        if np.linalg.eigvalsh(S).min() < -1e-12:
            raise CapabilityError("operator is not monotone")
        return _concave_box_max(S, c, const, lo, hi)
    V = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if not linear:
        raise CapabilityError("vertex-described polytopes need a linear gap objective")
    return float(np.max(V @ c) + const)


def enumerate_vertices(G, h, tol=1e-9):
    """Vertices of {x : G x <= h} by intersecting every n-subset of rows.

    Returns
    -------
    ndarray, shape (p, n)
        Distinct vertices in lexicographic order.
    """
    G = np.asarray(G, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    mrows, n = G.shape
    subsets = np.array(list(itertools.combinations(range(mrows), n)), dtype=np.int64)
    if subsets.size == 0:
        return np.zeros((0, n))
    M = G[subsets]
    rhs = h[subsets]
    ok = np.abs(np.linalg.det(M)) > 1e-10
    sol = np.linalg.solve(M[ok], rhs[ok][..., None])[..., 0]
    feas = np.all(sol @ G.T <= h + tol * (1.0 + np.abs(h)), axis=1)
    V = sol[feas]
    if V.size == 0:
        return np.zeros((0, n))
    V = V[np.lexsort(V.T[::-1])]
    keep = [0]
    for i in range(1, len(V)):
        if np.linalg.norm(V[i] - V[keep[-1]]) > 1e-8 and all(np.linalg.norm(V[i] - V[j]) > 1e-8 for j in keep):
            keep.append(i)
    return V[keep]


def project_polytope_exact(x, G, h, tol=1e-10):
    """Exact projection onto {y : G y <= h} by active-set enumeration.

    Every subset of at most n rows is tried as the active set; the point
    satisfying all KKT conditions is returned. Meant for tiny instances.
    """
    x = np.asarray(x, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    mrows, n = G.shape
    if np.all(G @ x <= h + tol):
        return x.copy()
    best, best_d = None, np.inf
    for size in range(1, min(n, mrows) + 1):
        for act in itertools.combinations(range(mrows), size):
            Ga = G[list(act)]
            gram = Ga @ Ga.T
            if np.linalg.matrix_rank(gram) < size:
                continue
            lam = np.linalg.solve(gram, Ga @ x - h[list(act)])
            if np.any(lam < -tol):
                continue
            y = x - Ga.T @ lam
            if np.all(G @ y <= h + tol * (1.0 + np.abs(h))):
                d = float(np.linalg.norm(y - x))
                if d < best_d:
                    best, best_d = y, d
    if best is None:
        raise ConvergenceError("no KKT point found; polytope may be empty")
    return best


@dataclass
class IdentificationResult:
    """Outcome of the finite-identification check.

    Attributes
    ----------
    in_solution_set : bool
        True when every minimizing vertex lies in X*.
    lp_point : ndarray
        First minimizing vertex.
    tied : ndarray
        All vertices attaining the minimum (up to 1e-12 relative).
    z : ndarray
        The (estimated) mean operator value used as objective.
    """

    in_solution_set: bool
    lp_point: np.ndarray
    tied: np.ndarray
    z: np.ndarray


def identification_check(problem, vertices, x_hat, n_samples, solution_spec, seed=0):
    """Minimize <E[F(v, x_hat)], x> over the polytope with vertex list ``vertices``.

    Parameters
    ----------
    n_samples : int or None
        Monte Carlo sample count; None uses the exact mean operator.
    """
    V = np.atleast_2d(np.asarray(vertices, dtype=np.float64))
    x_hat = as_array(x_hat)
    layout = problem.layout
    if n_samples is None:
        z = as_array(problem.mean_operator(x_hat))
    else:
        if n_samples < 1:
            raise UsageError("n_samples must be positive")
        acc = np.zeros(layout.n)
        for j in range(layout.m):
            draws = problem.draw_noise(j, RngStream(seed, noise_stream_id(j)), n_samples)
            acc[layout.slice(j)] = np.mean([problem.evaluate_block(j, v, x_hat) for v in draws], axis=0)
        z = acc
    vals = V @ z
    vmin = float(vals.min())
    tied = V[vals <= vmin + 1e-12 * max(1.0, abs(vmin))]
    inside = all(solution_spec.distance(t) <= 1e-8 for t in tied)
    return IdentificationResult(inside, tied[0].copy(), tied, z)
