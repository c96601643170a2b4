"""Hot loops of the solvers and of Dykstra's projection.

Each kernel exists twice: a scalar-loop version compiled by numba and a
vectorized numpy version. :mod:`sviproj._backend` picks one per call. The
two agree to rounding but are not bitwise identical (different summation
order in the matrix-vector product); determinism holds per backend.
"""
import numpy as np

from ._backend import get_backend, njit
from .errors import ConvergenceError

__all__ = ["run_segment", "dykstra_polyhedron"]


@njit(cache=True, nogil=True)
def _segment_nb(x, A, b, V, lo, hi, G, h, gnorm2, c_start, c_end, pick, alpha_c, eps_c,
                beta_g, w_hat, w_til, flo, fhi, acc_hat, acc_til, sums):
    steps, n = V.shape
    n_groups = pick.shape[1]
    y = np.empty(n)
    xn = np.empty(n)
    for s in range(steps):
        for i in range(n):
            acc = b[i]
            for j in range(n):
                acc += A[i, j] * x[j]
            F = acc + V[s, i]
            yi = x[i] - alpha_c[s, i] * (F + eps_c[s, i] * x[i])
            if yi < lo[i]:
                yi = lo[i]
            elif yi > hi[i]:
                yi = hi[i]
            y[i] = yi
            xn[i] = yi
        for g in range(n_groups):
            c = pick[s, g]
            if c < 0:
                continue
            val = -h[c]
            for i in range(c_start[c], c_end[c]):
                val += G[c, i] * y[i]
            if val > 0.0:
                coef = beta_g[s, g] * val / gnorm2[c]
                for i in range(c_start[c], c_end[c]):
                    zi = y[i] - coef * G[c, i]
                    if zi < lo[i]:
                        zi = lo[i]
                    elif zi > hi[i]:
                        zi = hi[i]
                    xn[i] = zi
        finite = True
        for i in range(n):
            x[i] = xn[i]
            if not np.isfinite(xn[i]):
                finite = False
        if not finite:
            return s
        wh = w_hat[s]
        wt = w_til[s]
        for i in range(n):
            p = x[i]
            if p < flo[i]:
                p = flo[i]
            elif p > fhi[i]:
                p = fhi[i]
            acc_hat[i] += wh * p
            acc_til[i] += wt * x[i]
        sums[0] += wh
        sums[1] += wt
    return -1


def _segment_np(x, A, b, V, lo, hi, G, h, gnorm2, c_start, c_end, pick, alpha_c, eps_c,
                beta_g, w_hat, w_til, flo, fhi, acc_hat, acc_til, sums):
    steps = V.shape[0]
    n_groups = pick.shape[1]
    for s in range(steps):
        F = A @ x + b + V[s]
        y = np.clip(x - alpha_c[s] * (F + eps_c[s] * x), lo, hi)
        xn = y.copy()
        for g in range(n_groups):
            c = pick[s, g]
            if c < 0:
                continue
            sl = slice(c_start[c], c_end[c])
            val = G[c, sl] @ y[sl] - h[c]
            if val > 0.0:
                coef = beta_g[s, g] * val / gnorm2[c]
                xn[sl] = np.clip(y[sl] - coef * G[c, sl], lo[sl], hi[sl])
        x[:] = xn
        if not np.all(np.isfinite(xn)):
            return s
        acc_hat += w_hat[s] * np.clip(x, flo, fhi)
        acc_til += w_til[s] * x
        sums[0] += w_hat[s]
        sums[1] += w_til[s]
    return -1


def run_segment(x, A, b, V, lo, hi, G, h, gnorm2, c_start, c_end, pick, alpha_c, eps_c,
                beta_g, w_hat, w_til, flo, fhi, acc_hat, acc_til, sums):
    """Advance the incremental projection recursion over ``len(V)`` steps.

    All arrays are updated in place. Step s uses the operator sample
    ``A x + b + V[s]``, the per-coordinate stepsizes ``alpha_c[s]`` and
    regularization ``eps_c[s]``, and for each control group g the
    constraint row ``pick[s, g]`` (-1 to skip) with relaxation
    ``beta_g[s, g]``. After the step, ``w_hat[s] * clip(x, flo, fhi)`` and
    ``w_til[s] * x`` are added to the accumulators and the weights to
    ``sums``.

    Returns
    -------
    int
        Index of the first step producing a non-finite iterate, or -1.
    """
    fn = _segment_nb if get_backend() == "numba" else _segment_np
    return int(fn(x, A, b, V, lo, hi, G, h, gnorm2, c_start, c_end, pick, alpha_c, eps_c,
                  beta_g, w_hat, w_til, flo, fhi, acc_hat, acc_til, sums))


@njit(cache=True, nogil=True)
def _dykstra_nb(x, G, h, lo, hi, tol, max_sweeps):
    n = x.shape[0]
    p = G.shape[0]
    gg = np.empty(p)
    for c in range(p):
        acc = 0.0
        for i in range(n):
            acc += G[c, i] * G[c, i]
        gg[c] = acc
    inc_box = np.zeros(n)
    inc_h = np.zeros(p)
    prev = np.empty(n)
    for sweep in range(max_sweeps):
        change = 0.0
        for i in range(n):
            prev[i] = x[i]
        for i in range(n):
            z = x[i] + inc_box[i]
            xi = z
            if xi < lo[i]:
                xi = lo[i]
            elif xi > hi[i]:
                xi = hi[i]
            new = z - xi
            change += (new - inc_box[i]) ** 2
            inc_box[i] = new
            x[i] = xi
        for c in range(p):
            old = inc_h[c]
            val = -h[c]
            for i in range(n):
                val += G[c, i] * (x[i] + old * G[c, i])
            t = val / gg[c] if val > 0.0 else 0.0
            for i in range(n):
                x[i] = x[i] + (old - t) * G[c, i]
            change += (t - old) ** 2 * gg[c]
            inc_h[c] = t
        move = 0.0
        for i in range(n):
            move += (x[i] - prev[i]) ** 2
        if np.sqrt(change) < tol and np.sqrt(move) < tol:
            return sweep + 1
    return -1


def _dykstra_np(x, G, h, lo, hi, tol, max_sweeps):
    gg = np.einsum("ij,ij->i", G, G)
    inc_box = np.zeros_like(x)
    inc_h = np.zeros(G.shape[0])
    for sweep in range(max_sweeps):
        prev = x.copy()
        z = x + inc_box
        x[:] = np.clip(z, lo, hi)
        new = z - x
        change = float(np.sum((new - inc_box) ** 2))
        inc_box = new
        for c in range(G.shape[0]):
            old = inc_h[c]
            val = G[c] @ (x + old * G[c]) - h[c]
            t = val / gg[c] if val > 0.0 else 0.0
            x += (old - t) * G[c]
            change += (t - old) ** 2 * gg[c]
            inc_h[c] = t
        if np.sqrt(change) < tol and np.linalg.norm(x - prev) < tol:
            return sweep + 1
    return -1


def dykstra_polyhedron(x, G, h, lo, hi, tol=1e-10, max_sweeps=100_000):
    """Project ``x`` onto {z : lo <= z <= hi, G z <= h} by Dykstra's method.

    Returns
    -------
    (ndarray, int)
        Projection and number of sweeps used.

    Raises
    ------
    ConvergenceError
        If ``max_sweeps`` sweeps do not reach ``tol``.
    """
    out = np.array(x, dtype=np.float64)
    G = np.ascontiguousarray(G, dtype=np.float64)
    fn = _dykstra_nb if get_backend() == "numba" else _dykstra_np
    sweeps = int(fn(out, G, np.asarray(h, dtype=np.float64), np.asarray(lo, dtype=np.float64),
                    np.asarray(hi, dtype=np.float64), float(tol), int(max_sweeps)))
    if sweeps < 0:
        raise ConvergenceError("Dykstra iteration cap reached", best=out)
    return out, sweeps
