"""Machinery shared by the two solvers: iteration state, kernel compilation
and grid-segment execution."""
import numpy as np

from . import kernels
from .core import AffineProblem, RngStream, _transform_uniform, control_stream_id, noise_stream_id
from .errors import ConfigurationError

CHUNK = 1 << 15


class IterState:
    """Iterate, counters, ergodic sums and random streams of one run.

    The sums always include the current index k: ``hat_sum`` holds
    sum_{i<=k} w_i P(x^i) and ``til_sum`` holds sum_{i<=k} B_i x^i, with the
    weights chosen by the solver.
    """

    def __init__(self, x0, seed, m, n_groups, w_hat0, w_til0, proj0, history=0):
        self.k = 0
        self.x = np.array(x0, dtype=np.float64)
        self.seed = int(seed)
        self.v_streams = [RngStream(seed, noise_stream_id(j)) for j in range(m)]
        self.w_streams = [RngStream(seed, control_stream_id(g)) for g in range(n_groups)]
        self.sums = np.array([w_hat0, w_til0], dtype=np.float64)
        self.hat_sum = w_hat0 * np.asarray(proj0, dtype=np.float64)
        self.til_sum = w_til0 * self.x
        self.history = None
        if history:
            from collections import deque

            self.history = deque([(0, self.x.copy())], maxlen=int(history))

    @property
    def S(self):
        return float(self.sums[0])

    @property
    def Z(self):
        return float(self.sums[1])

    def hat(self):
        return self.hat_sum / self.sums[0]

    def tilde(self):
        return self.til_sum / self.sums[1]

    def push(self, x_new, w_hat, w_til, proj):
        self.x = x_new
        self.k += 1
        self.sums[0] += w_hat
        self.sums[1] += w_til
        self.hat_sum += w_hat * proj
        self.til_sum += w_til * x_new
        if self.history is not None:
            self.history.append((self.k, x_new.copy()))


class Compiled:
    """Kernel-ready arrays for an affine problem with box hard sets and
    halfspace-representable soft constraints."""

    def __init__(self, problem, spec, control, union):
        lo, hi, G, h, block = spec.polyhedral_data()
        layout = spec.layout
        self.A = np.ascontiguousarray(problem.A)
        self.b = problem.b.copy()
        self.noise = problem.noise
        self.level = problem.noise_level
        self.lo, self.hi = lo, hi
        self.G = np.ascontiguousarray(G)
        self.h = h
        self.gnorm2 = np.einsum("ij,ij->i", G, G) if G.size else np.zeros(0)
        off = layout.offsets
        self.c_start = np.array([off[j] for j in block], dtype=np.int64)
        self.c_end = np.array([off[j + 1] for j in block], dtype=np.int64)
        self.sizes = layout.sizes
        starts = np.concatenate([[0], np.cumsum([len(gs) for gs in spec.soft])]).astype(np.int64)
        if union:
            self.groups = [(np.arange(G.shape[0], dtype=np.int64), control.union_cum)]
        else:
            self.groups = [
                (np.arange(starts[j], starts[j + 1], dtype=np.int64), control.block_cum[j])
                for j in range(layout.m)
            ]

    @staticmethod
    def applicable(problem, spec):
        return isinstance(problem, AffineProblem) and spec.polyhedral_data() is not None

    def draw(self, state, steps):
        """Scaled noise V and chosen constraint rows for the next ``steps``."""
        V = np.concatenate(
            [_transform_uniform(self.noise, state.v_streams[j].random((steps, nj))) for j, nj in enumerate(self.sizes)],
            axis=1,
        )
        V = self.level * V
        pick = np.full((steps, len(self.groups)), -1, dtype=np.int64)
        for g, (rows, cum) in enumerate(self.groups):
            if rows.size == 0:
                continue
            u = state.w_streams[g].random(steps)
            idx = np.minimum(np.searchsorted(cum, u, side="right"), rows.size - 1)
            pick[:, g] = rows[idx]
        return V, pick


def advance(state, comp, steps, coeffs, flo, fhi):
    """Run ``steps`` iterations through the kernel.

    ``coeffs(k0, steps)`` returns (alpha_c, eps_c, beta_g, w_hat, w_til) for
    indices k0 .. k0+steps-1 (the weights refer to the new index k+1).

    Returns
    -------
    int
        -1 on success, else the index k of the first non-finite iterate.
    """
    done = 0
    while done < steps:
        n = min(CHUNK, steps - done)
        alpha_c, eps_c, beta_g, w_hat, w_til = coeffs(state.k, n)
        if np.any(beta_g <= 0.0) or np.any(beta_g >= 2.0):
            raise ConfigurationError("relaxation parameter beta left (0, 2)")
        V, pick = comp.draw(state, n)
        status = kernels.run_segment(
            state.x, comp.A, comp.b, V, comp.lo, comp.hi, comp.G, comp.h, comp.gnorm2,
            comp.c_start, comp.c_end, pick, alpha_c, eps_c, beta_g, w_hat, w_til,
            flo, fhi, state.hat_sum, state.til_sum, state.sums,
        )
        if status >= 0:
            state.k += status + 1
            return state.k
        state.k += n
        done += n
    return -1
