"""Hard sets with exact projections, sampled soft constraints and the
incremental feasibility step."""
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .core import BlockLayout, _like, as_array
from .errors import ConvergenceError, InternalError, LayoutError, UsageError

__all__ = [
    "HardSet",
    "SoftConstraint",
    "FeasibleSpec",
    "ControlSequence",
    "project_hard",
    "feasibility_step",
    "FeasStepCheck",
    "check_feasstep_inequality",
    "dykstra_project",
    "project_simplex",
]


def project_simplex(x, radius=1.0):
    """Euclidean projection onto {z >= 0, sum z = radius} by sorting."""
    x = np.asarray(x, dtype=np.float64)
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - radius
    ind = np.arange(1, x.size + 1)
    cond = u - css / ind > 0
    r = ind[cond][-1]
    theta = css[cond][-1] / r
    return np.maximum(x - theta, 0.0)


class HardSet:
    """Closed convex set with a closed-form Euclidean projection.

    Use the constructors :meth:`full`, :meth:`box`, :meth:`ball`,
    :meth:`halfspace`, :meth:`affine` and :meth:`simplex`.
    """

    def __init__(self, kind, dim, **params):
        self.kind = kind
        self.dim = int(dim)
        self.params = params

    def __repr__(self):
        return f"HardSet({self.kind!r}, dim={self.dim})"

    @classmethod
    def full(cls, n):
        return cls("full", n)

    @classmethod
    def box(cls, lo, hi):
        lo = np.array(lo, dtype=np.float64).reshape(-1)
        hi = np.array(hi, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise UsageError("box needs lo <= hi of equal shape")
        return cls("box", lo.size, lo=lo, hi=hi)

    @classmethod
    def ball(cls, center, radius):
        center = np.array(center, dtype=np.float64).reshape(-1)
        if radius < 0:
            raise UsageError("radius must be nonnegative")
        return cls("ball", center.size, center=center, radius=float(radius))

    @classmethod
    def halfspace(cls, a, b):
        a = np.array(a, dtype=np.float64).reshape(-1)
        if not np.any(a):
            raise UsageError("halfspace normal must be nonzero")
        return cls("halfspace", a.size, a=a, b=float(b), aa=float(a @ a))

    @classmethod
    def affine(cls, A, b):
        """{x : A x = b}; rows of A are the normals of the equality pairs."""
        A = np.atleast_2d(np.array(A, dtype=np.float64))
        b = np.array(b, dtype=np.float64).reshape(-1)
        pinv = np.linalg.pinv(A)
        if not np.allclose(A @ (pinv @ b), b, atol=1e-10):
            raise UsageError("affine set is empty")
        return cls("affine", A.shape[1], A=A, b=b, pinv=pinv)

    @classmethod
    def simplex(cls, n, radius=1.0):
        if radius <= 0:
            raise UsageError("simplex radius must be positive")
        return cls("simplex", n, radius=float(radius))

    def box_bounds(self):
        """(lo, hi) when the set is a box or the whole space, else None."""
        if self.kind == "full":
            return np.full(self.dim, -np.inf), np.full(self.dim, np.inf)
        if self.kind == "box":
            return self.params["lo"], self.params["hi"]
        return None

    def _project(self, x):
        p = self.params
        if self.kind == "full":
            return x.copy()
        if self.kind == "box":
            return np.clip(x, p["lo"], p["hi"])
        if self.kind == "ball":
            d = x - p["center"]
            nd = np.linalg.norm(d)
            if nd <= p["radius"]:
                return x.copy()
            return p["center"] + d * (p["radius"] / nd)
        if self.kind == "halfspace":
            viol = p["a"] @ x - p["b"]
            if viol <= 0:
                return x.copy()
            return x - (viol / p["aa"]) * p["a"]
        if self.kind == "affine":
            return x - p["pinv"] @ (p["A"] @ x - p["b"])
        return project_simplex(x, p["radius"])

    def project(self, x):
        arr = as_array(x)
        if arr.size != self.dim:
            raise LayoutError(f"set has dimension {self.dim}, point has {arr.size}")
        return _like(x, self._project(arr))

    def contains(self, x, tol=1e-12):
        arr = as_array(x)
        return bool(np.linalg.norm(arr - self._project(arr)) <= tol * (1.0 + np.linalg.norm(arr)))

    def sample(self, rng, size, scale=1.0):
        """Draw ``size`` points of the set, spread over roughly ``scale``.

        Parameters
        ----------
        rng : numpy.random.Generator
        """
        z = rng.normal(size=(size, self.dim)) * scale
        if self.kind == "box":
            lo = np.where(np.isfinite(self.params["lo"]), self.params["lo"], -scale)
            hi = np.where(np.isfinite(self.params["hi"]), self.params["hi"], scale)
            return lo + (hi - lo) * rng.random((size, self.dim))
        if self.kind == "simplex":
            return self.params["radius"] * rng.dirichlet(np.ones(self.dim), size)
        return np.array([self._project(zi) for zi in z])


class SoftConstraint:
    """Constraint g(x) <= 0 handled through sampled subgradient steps.

    Use :meth:`affine` for g(x) = <a, x> - b or :meth:`distance` for
    g(x) = dist(x, C) with C a :class:`HardSet`.
    """

    def __init__(self, kind, dim, **params):
        self.kind = kind
        self.dim = int(dim)
        self.params = params

    def __repr__(self):
        return f"SoftConstraint({self.kind!r}, dim={self.dim})"

    @classmethod
    def affine(cls, a, b):
        a = np.array(a, dtype=np.float64).reshape(-1)
        if not np.any(a):
            raise UsageError("affine constraint needs a nonzero normal")
        return cls("affine", a.size, a=a, b=float(b))

    @classmethod
    def distance(cls, target):
        return cls("distance", target.dim, target=target)

    @property
    def subgrad_bound(self):
        """C_g, a bound on the norm of subgradients of g+."""
        if self.kind == "affine":
            return float(np.linalg.norm(self.params["a"]))
        return 1.0

    def value(self, x):
        arr = as_array(x)
        if self.kind == "affine":
            return float(self.params["a"] @ arr - self.params["b"])
        return float(np.linalg.norm(arr - self.params["target"]._project(arr)))

    def positive_part(self, x):
        return max(self.value(x), 0.0)

    def subgradient(self, x):
        """An element of the subdifferential of g+ at ``x`` (zero where g+ = 0)."""
        arr = as_array(x)
        if self.kind == "affine":
            a = self.params["a"]
            d = a.copy() if a @ arr - self.params["b"] > 0 else np.zeros_like(a)
        else:
            diff = arr - self.params["target"]._project(arr)
            dist = np.linalg.norm(diff)
            d = diff / dist if dist > 0 else np.zeros_like(arr)
        return _like(x, d)

    def project_level_set(self, x):
        """Projection onto {g <= 0}."""
        arr = as_array(x)
        if self.kind == "affine":
            a, b = self.params["a"], self.params["b"]
            viol = a @ arr - b
            out = arr - (viol / (a @ a)) * a if viol > 0 else arr.copy()
        else:
            out = self.params["target"]._project(arr)
        return _like(x, out)

    project = project_level_set

    def as_halfspace(self):
        """(a, b) with g+(x) = max(<a,x> - b, 0) and subgradient a, or None.

        Distance to a halfspace is returned with the normal scaled to unit
        length, which makes it an affine constraint with C_g = 1.
        """
        if self.kind == "affine":
            return self.params["a"], self.params["b"]
        t = self.params["target"]
        if t.kind == "halfspace":
            na = np.sqrt(t.params["aa"])
            return t.params["a"] / na, t.params["b"] / na
        return None


class FeasibleSpec:
    """X = X_0 intersected with the soft constraint sets, block by block.

    Parameters
    ----------
    layout : BlockLayout
    hard : sequence of HardSet
        X_0^j for each block.
    soft : sequence of sequence of SoftConstraint
        Constraints of each block, acting on that block's coordinates.
    regularity_c : sequence of float, optional
        Constants c^j with dist(x_j, X^j)^2 <= c^j E[g+_omega(x_j)^2].
    exact_feasible_projection : callable, optional
        Exact Pi_X on flat arrays; used by metrics only.
    eta : float, optional
        Linear-regularity constant of the whole family, when known.
    feasible_box : tuple of ndarray, optional
        (lo, hi) when X itself is a box; then Pi_X is a clip and
        ``exact_feasible_projection`` defaults to it.
    """

    def __init__(self, layout, hard, soft, regularity_c=None, exact_feasible_projection=None, eta=None,
                 feasible_box=None):
        if len(hard) != layout.m or len(soft) != layout.m:
            raise LayoutError("need one hard set and one constraint list per block")
        for j, (h, gs) in enumerate(zip(hard, soft)):
            if h.dim != layout.sizes[j] or any(g.dim != layout.sizes[j] for g in gs):
                raise LayoutError(f"set dimensions do not match block {j}")
        self.layout = layout
        self.hard = tuple(hard)
        self.soft = tuple(tuple(gs) for gs in soft)
        if regularity_c is not None:
            regularity_c = tuple(float(c) for c in regularity_c)
            if len(regularity_c) != layout.m or min(regularity_c) <= 0:
                raise UsageError("regularity_c needs one positive value per block")
        self.regularity_c = regularity_c
        if feasible_box is not None:
            lo, hi = (np.array(v, dtype=np.float64).reshape(layout.n) for v in feasible_box)
            if np.any(lo > hi):
                raise UsageError("feasible box has lo > hi")
            feasible_box = (lo, hi)
            if exact_feasible_projection is None:
                def exact_feasible_projection(x, lo=lo, hi=hi):
                    return np.clip(x, lo, hi)
        self.feasible_box = feasible_box
        self.exact_feasible_projection = exact_feasible_projection
        self.eta = eta

    @property
    def num_constraints(self):
        return sum(len(gs) for gs in self.soft)

    def constraints(self):
        """Flat list of (block, index, constraint) in block order."""
        return [(j, i, g) for j, gs in enumerate(self.soft) for i, g in enumerate(gs)]

    def project_hard(self, x):
        arr = as_array(x, self.layout)
        out = np.empty_like(arr)
        for j in range(self.layout.m):
            s = self.layout.slice(j)
            out[s] = self.hard[j]._project(arr[s])
        return _like(x, out)

    def in_hard(self, x, tol=1e-12):
        arr = as_array(x, self.layout)
        return all(self.hard[j].contains(arr[self.layout.slice(j)], tol) for j in range(self.layout.m))

    def max_violation(self, x):
        arr = as_array(x, self.layout)
        worst = 0.0
        for j, _, g in self.constraints():
            worst = max(worst, g.positive_part(arr[self.layout.slice(j)]))
        return worst

    def polyhedral_data(self):
        """Box bounds and lifted halfspaces (G, h) when X_0 is a box and all
        soft constraints are halfspace-representable, else None."""
        lo, hi = [], []
        for h in self.hard:
            bb = h.box_bounds()
            if bb is None:
                return None
            lo.append(bb[0])
            hi.append(bb[1])
        rows, rhs, block = [], [], []
        for j, _, g in self.constraints():
            hs = g.as_halfspace()
            if hs is None:
                return None
            row = np.zeros(self.layout.n)
            row[self.layout.slice(j)] = hs[0]
            rows.append(row)
            rhs.append(hs[1])
            block.append(j)
        G = np.array(rows).reshape(len(rows), self.layout.n)
        return np.concatenate(lo), np.concatenate(hi), G, np.array(rhs, dtype=np.float64), np.array(block, dtype=np.int64)

    def feasible_projection(self, x, tol=1e-10, max_sweeps=100_000):
        """Pi_X(x): the exact oracle when given, else Dykstra."""
        arr = as_array(x, self.layout)
        if self.exact_feasible_projection is not None:
            return _like(x, np.asarray(self.exact_feasible_projection(arr), dtype=np.float64))
        poly = self.polyhedral_data()
        if poly is not None:
            lo, hi, G, h, _ = poly
            out, _ = kernels.dykstra_polyhedron(arr, G, h, lo, hi, tol, max_sweeps)
            return _like(x, out)
        sets = []
        for j in range(self.layout.m):
            s = self.layout.slice(j)
            sets.append(_Lifted(self.hard[j], s))
            sets.extend(_Lifted(g, s) for g in self.soft[j])
        return _like(x, dykstra_project(sets, arr, tol, max_sweeps))

    def sample_hard(self, rng, size, scale=1.0):
        """Points of X_0 drawn blockwise with :meth:`HardSet.sample`."""
        return np.concatenate([h.sample(rng, size, scale) for h in self.hard], axis=1)


class _Lifted:
    """A set acting on one block of the full vector."""

    def __init__(self, base, sl):
        self.base = base
        self.sl = sl

    def project(self, x):
        out = x.copy()
        out[self.sl] = as_array(self.base.project(x[self.sl]))
        return out


class ControlSequence:
    """I.i.d. distribution of the random constraint index omega_k.

    Parameters
    ----------
    spec : FeasibleSpec
    block_probs : sequence of array_like, optional
        P(omega = i) within each block's family (used by the distributed
        method). Uniform when omitted.
    union_probs : array_like, optional
        Distribution over the flat list ``spec.constraints()`` (used by the
        centralized method). Uniform when omitted.
    """

    def __init__(self, spec: FeasibleSpec, block_probs=None, union_probs=None):
        self.spec = spec
        counts = [len(gs) for gs in spec.soft]
        if block_probs is None:
            block_probs = [np.full(c, 1.0 / c) if c else np.zeros(0) for c in counts]
        self.block_probs = tuple(self._check(p, c) for p, c in zip(block_probs, counts))
        total = sum(counts)
        if union_probs is None:
            union_probs = np.full(total, 1.0 / total) if total else np.zeros(0)
        self.union_probs = self._check(union_probs, total)
        self.block_cum = tuple(np.cumsum(p) for p in self.block_probs)
        self.union_cum = np.cumsum(self.union_probs)
        self._flat = spec.constraints()

    @staticmethod
    def _check(p, count):
        p = np.array(p, dtype=np.float64).reshape(-1)
        if p.size != count:
            raise UsageError("control distribution has the wrong length")
        if count and (np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12):
            raise UsageError("control probabilities must be nonnegative and sum to one")
        return p

    @staticmethod
    def _pick(cum, u):
        return min(int(np.searchsorted(cum, u, side="right")), cum.size - 1)

    def draw_block(self, j, u):
        """Constraint index within block j for a uniform draw ``u``."""
        return self._pick(self.block_cum[j], u)

    def draw_union(self, u):
        """(block, index) of a constraint of the union for a uniform draw ``u``."""
        j, i, _ = self._flat[self._pick(self.union_cum, u)]
        return j, i

    def min_probability(self, union=True):
        """Smallest P(omega = i); equals lambda / |I| in the sampling lemma."""
        if union:
            return float(self.union_probs.min())
        return float(min(p.min() for p in self.block_probs if p.size))


def project_hard(spec: FeasibleSpec, x):
    """Blockwise projection onto X_0."""
    return spec.project_hard(x)


def feasibility_step(y, g: SoftConstraint, beta, hard: HardSet):
    """Pi_{X_0}[y - beta g+(y) d / ||d||^2] with d a subgradient of g+ at y.

    Returns ``y`` unchanged when g+(y) = 0.
    """
    if not 0.0 < beta < 2.0:
        raise UsageError("beta must lie in (0, 2)")
    arr = as_array(y)
    gp = g.positive_part(arr)
    if gp == 0.0:
        return _like(y, arr.copy())
    d = as_array(g.subgradient(arr))
    dd = float(d @ d)
    if dd == 0.0:
        raise InternalError("zero subgradient at a point violating the constraint")
    return _like(y, hard._project(arr - (beta * gp / dd) * d))


class FeasStepCheck:
    __slots__ = ("lhs", "rhs", "holds")

    def __init__(self, lhs, rhs, holds):
        self.lhs, self.rhs, self.holds = lhs, rhs, holds

    def __repr__(self):
        return f"FeasStepCheck(lhs={self.lhs:.6g}, rhs={self.rhs:.6g}, holds={self.holds})"


def check_feasstep_inequality(x1, u, x0, g, alpha, beta, tau, hard):
    """Evaluate both sides of the one-step inequality of the feasibility step.

    With y = Pi_{X_0}[x1 - alpha u] and x2 the feasibility step from y,

        ||x2 - x0||^2 <= ||x1 - x0||^2 - 2 alpha <x1 - x0, u>
                         + [1 + tau B] alpha^2 ||u||^2
                         - (B / C_g^2)(1 - 1/tau) g+(x1)^2,

    where B = beta (2 - beta), for any x0 in X_0 with g+(x0) = 0.

    Returns
    -------
    FeasStepCheck
        ``holds`` uses the slack 1e-10 (1 + |rhs|).
    """
    x1, u, x0 = as_array(x1), as_array(u), as_array(x0)
    if tau <= 1.0:
        raise UsageError("tau must exceed 1")
    if alpha <= 0 or not 0.0 < beta < 2.0:
        raise UsageError("alpha must be positive and beta in (0, 2)")
    if not hard.contains(x1, 1e-10) or not hard.contains(x0, 1e-10):
        raise UsageError("x1 and x0 must lie in the hard set")
    if g.positive_part(x0) > 1e-12:
        raise UsageError("x0 must satisfy the soft constraint")
    y = hard._project(x1 - alpha * u)
    x2 = as_array(feasibility_step(y, g, beta, hard))
    B = beta * (2.0 - beta)
    cg = g.subgrad_bound
    lhs = float(np.sum((x2 - x0) ** 2))
    rhs = float(
        np.sum((x1 - x0) ** 2)
        - 2.0 * alpha * ((x1 - x0) @ u)
        + (1.0 + tau * B) * alpha**2 * (u @ u)
        - (B / cg**2) * (1.0 - 1.0 / tau) * g.positive_part(x1) ** 2
    )
    return FeasStepCheck(lhs, rhs, lhs <= rhs + 1e-10 * (1.0 + abs(rhs)))


def dykstra_project(sets: Sequence, x, tol=1e-10, max_sweeps=100_000):
    """Projection onto the intersection of ``sets`` by Dykstra's algorithm.

    Parameters
    ----------
    sets : sequence
        Objects with a ``project`` method (HardSet, SoftConstraint, ...).
    x : array_like or BlockVector
    tol : float
        Stop once a full sweep changes every correction term by less than
        ``tol`` in total and the iterate moved by less than ``tol``.
    max_sweeps : int

    Raises
    ------
    ConvergenceError
        When ``max_sweeps`` is reached; carries the last iterate.
    """
    if tol <= 0:
        raise UsageError("tol must be positive")
    arr = as_array(x).copy()
    if len(sets) == 1:
        return _like(x, as_array(sets[0].project(arr)))
    if all(isinstance(s, (HardSet, SoftConstraint)) for s in sets):
        poly = _as_polyhedron(sets, arr.size)
        if poly is not None:
            out, _ = kernels.dykstra_polyhedron(arr, *poly, tol, max_sweeps)
            return _like(x, out)
    incr = [np.zeros_like(arr) for _ in sets]
    for _ in range(max_sweeps):
        change = 0.0
        prev = arr
        for i, s in enumerate(sets):
            z = arr + incr[i]
            arr = as_array(s.project(z))
            new = z - arr
            change += float(np.sum((new - incr[i]) ** 2))
            incr[i] = new
        if np.sqrt(change) < tol and np.linalg.norm(arr - prev) < tol:
            return _like(x, arr)
    raise ConvergenceError("Dykstra iteration cap reached", best=arr)


def _as_polyhedron(sets, n):
    """(G, h, lo, hi) when the sets are halfspaces plus at most one box."""
    rows, rhs = [], []
    lo, hi = np.full(n, -np.inf), np.full(n, np.inf)
    boxes = 0
    for s in sets:
        if isinstance(s, HardSet):
            if s.kind == "halfspace":
                rows.append(s.params["a"])
                rhs.append(s.params["b"])
                continue
            bb = s.box_bounds()
            if bb is None or boxes:
                return None
            boxes += 1
            lo, hi = bb
        else:
            hs = s.as_halfspace()
            if hs is None:
                return None
            rows.append(hs[0])
            rhs.append(hs[1])
    G = np.array(rows, dtype=np.float64).reshape(len(rows), n)
    return G, np.array(rhs, dtype=np.float64), lo, hi
