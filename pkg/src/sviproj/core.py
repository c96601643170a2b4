"""Block-structured vectors, stochastic problem definitions and RNG streams.

Solvers work on flat float64 arrays for speed; :class:`BlockVector` is the
public value type that carries the Cartesian layout alongside the data.
Every public function accepting a point takes either one.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import LayoutError, UsageError

__all__ = [
    "BlockLayout",
    "BlockVector",
    "as_array",
    "linear_combine",
    "block_scale",
    "RngStream",
    "noise_stream_id",
    "control_stream_id",
    "OperatorSample",
    "StochasticProblem",
    "AffineProblem",
    "SolutionSpec",
]


@dataclass(frozen=True)
class BlockLayout:
    """Sizes n_1, ..., n_m of the blocks of a point in R^n."""

    sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) == 0 or any(s < 1 for s in sizes):
            raise LayoutError(f"every block must be nonempty, got {sizes}")
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def single(cls, n):
        return cls((int(n),))

    @property
    def m(self):
        return len(self.sizes)

    @property
    def n(self):
        return sum(self.sizes)

    @property
    def offsets(self):
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.sizes)]))

    def slice(self, j):
        off = self.offsets
        return slice(off[j], off[j + 1])

    def block_index(self):
        """Array mapping each coordinate to its block number."""
        return np.repeat(np.arange(self.m), self.sizes)

    def split(self, x):
        x = np.asarray(x)
        return [x[self.slice(j)] for j in range(self.m)]


class BlockVector:
    """Immutable point of R^n together with its block layout.

    Parameters
    ----------
    data : array_like
        Flat coordinates, length ``layout.n``.
    layout : BlockLayout, optional
        Defaults to a single block.
    """

    __slots__ = ("_data", "_layout")

    def __init__(self, data, layout=None):
        arr = np.array(data, dtype=np.float64).reshape(-1)
        if layout is None:
            layout = BlockLayout.single(arr.size)
        if arr.size != layout.n:
            raise LayoutError(f"data has {arr.size} entries, layout expects {layout.n}")
        arr.flags.writeable = False
        self._data = arr
        self._layout = layout

    @classmethod
    def from_blocks(cls, blocks):
        arrs = [np.atleast_1d(np.asarray(b, dtype=np.float64)).reshape(-1) for b in blocks]
        return cls(np.concatenate(arrs), BlockLayout(tuple(a.size for a in arrs)))

    @property
    def data(self):
        return self._data

    @property
    def layout(self):
        return self._layout

    @property
    def blocks(self):
        return tuple(self._layout.split(self._data))

    def block(self, j):
        return self._data[self._layout.slice(j)]

    def _check(self, other):
        if not isinstance(other, BlockVector) or other._layout != self._layout:
            raise LayoutError("block layouts differ")

    def inner(self, other):
        self._check(other)
        return float(sum(np.dot(a, b) for a, b in zip(self.blocks, other.blocks)))

    def norm(self):
        return float(np.linalg.norm(self._data))

    def __add__(self, other):
        self._check(other)
        return BlockVector(self._data + other._data, self._layout)

    def __sub__(self, other):
        self._check(other)
        return BlockVector(self._data - other._data, self._layout)

    def __mul__(self, scalar):
        return BlockVector(float(scalar) * self._data, self._layout)

    __rmul__ = __mul__

    def __neg__(self):
        return BlockVector(-self._data, self._layout)

    def __eq__(self, other):
        return (
            isinstance(other, BlockVector)
            and other._layout == self._layout
            and np.array_equal(other._data, self._data)
        )

    def __hash__(self):
        return hash((self._layout, self._data.tobytes()))

    def __repr__(self):
        return f"BlockVector({self.blocks!r})"

    def __array__(self, dtype=None, copy=None):
        return self._data if dtype is None else self._data.astype(dtype)


def as_array(x, layout: Optional[BlockLayout] = None):
    """Return the flat float64 coordinates of ``x``, checking the layout."""
    if isinstance(x, BlockVector):
        if layout is not None and x.layout != layout:
            raise LayoutError("block layouts differ")
        return x.data
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if layout is not None and arr.size != layout.n:
        raise LayoutError(f"expected {layout.n} coordinates, got {arr.size}")
    return arr


def _like(x, arr):
    """Wrap ``arr`` as a BlockVector when ``x`` was one."""
    if isinstance(x, BlockVector):
        return BlockVector(arr, x.layout)
    return arr


def linear_combine(coeffs: Sequence[float], points: Sequence[BlockVector]) -> BlockVector:
    """Return sum_i coeffs[i] * points[i]."""
    if len(coeffs) == 0 or len(points) == 0:
        raise UsageError("linear_combine needs at least one point")
    if len(coeffs) != len(points):
        raise UsageError("coeffs and points differ in length")
    layout = points[0].layout
    out = np.zeros(layout.n)
    for c, p in zip(coeffs, points):
        if p.layout != layout:
            raise LayoutError("block layouts differ")
        out += float(c) * p.data
    return BlockVector(out, layout)


def block_scale(alpha: Sequence[float], x: BlockVector) -> BlockVector:
    """Apply the block-diagonal scaling D(alpha) to ``x``."""
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    if alpha.size != x.layout.m:
        raise UsageError(f"need {x.layout.m} scale factors, got {alpha.size}")
    if np.any(alpha <= 0):
        raise UsageError("scale factors must be positive")
    return BlockVector(np.repeat(alpha, x.layout.sizes) * x.data, x.layout)


_MASK64 = (1 << 64) - 1


def noise_stream_id(j):
    """Stream id of the operator samples v_j of block j."""
    return 2 * j


def control_stream_id(j):
    """Stream id of the constraint controls of block (or control group) j."""
    return 2 * j + 1


class RngStream:
    """Counter-based random stream keyed by (seed, stream id).

    Philox is keyed with ``seed + 2**64 * stream_id``, so each pair gets
    its own key and the streams do not overlap. All draws are uniform
    doubles; samplers transform them deterministically.
    """

    def __init__(self, seed, stream_id=0):
        seed = int(seed)
        if not 0 <= seed <= _MASK64:
            raise UsageError("seed must fit in an unsigned 64-bit integer")
        if stream_id < 0:
            raise UsageError("stream id must be nonnegative")
        self.seed = seed
        self.stream_id = int(stream_id)
        self._gen = np.random.Generator(np.random.Philox(key=seed | (self.stream_id << 64)))

    @property
    def counter(self):
        """Philox block counter (advances by one per four 64-bit outputs)."""
        return int(self._gen.bit_generator.state["state"]["counter"][0])

    def random(self, size=None):
        return self._gen.random(size)


@dataclass(frozen=True)
class OperatorSample:
    """A realization F(v, .) of the random operator."""

    problem: "StochasticProblem"
    v: tuple

    def evaluate_block(self, j, x):
        return self.problem.evaluate_block(j, self.v[j], as_array(x, self.problem.layout))

    def evaluate(self, x):
        arr = as_array(x, self.problem.layout)
        out = np.concatenate([self.problem.evaluate_block(j, self.v[j], arr) for j in range(self.problem.layout.m)])
        return _like(x, out)


class StochasticProblem:
    """Random operator F(v, x) = (F_1(v_1, x), ..., F_m(v_m, x)).

    Parameters
    ----------
    layout : BlockLayout
    block_operator : callable
        ``block_operator(j, v_j, x)`` returning the block-j component.
    noise_dims : sequence of int
        Number of uniform doubles consumed per draw of v_j.
    noise_map : callable, optional
        ``noise_map(j, u)`` turning uniforms of shape (size, noise_dims[j])
        into samples v_j. Defaults to the identity.
    mean_operator : callable, optional
        Exact T(x) = E[F(v, x)].
    lipschitz_L : float, optional
    variance_bound : float, optional
        Bound on sigma(x)^2 = E||F(v,x) - T(x)||^2.
    solution : SolutionSpec, optional
    """

    def __init__(
        self,
        layout,
        block_operator,
        noise_dims,
        noise_map=None,
        mean_operator=None,
        lipschitz_L=None,
        variance_bound=None,
        solution=None,
    ):
        self.layout = layout
        self._block_operator = block_operator
        self.noise_dims = tuple(int(d) for d in noise_dims)
        if len(self.noise_dims) != layout.m:
            raise LayoutError("one noise dimension per block is required")
        self._noise_map = noise_map
        self._mean = mean_operator
        self.lipschitz_L = lipschitz_L
        self.variance_bound = variance_bound
        self.solution = solution

    @property
    def has_mean_operator(self):
        return self._mean is not None

    def mean_operator(self, x):
        if self._mean is None:
            raise UsageError("problem has no exact mean operator")
        return _like(x, np.asarray(self._mean(as_array(x, self.layout)), dtype=np.float64))

    def draw_noise(self, j, rng: RngStream, size=1):
        """Draw ``size`` samples of v_j, shape (size, noise_dims[j])."""
        u = rng.random((size, self.noise_dims[j]))
        return u if self._noise_map is None else self._noise_map(j, u)

    def evaluate_block(self, j, v_j, x):
        return np.asarray(self._block_operator(j, v_j, x), dtype=np.float64)

    def sample(self, rngs: Sequence[RngStream]) -> OperatorSample:
        """Draw one v = (v_1, ..., v_m), block j from ``rngs[j]``."""
        return OperatorSample(self, tuple(self.draw_noise(j, rngs[j], 1)[0] for j in range(self.layout.m)))

    def evaluate(self, v, x):
        arr = as_array(x, self.layout)
        return np.concatenate([self.evaluate_block(j, v[j], arr) for j in range(self.layout.m)])


_NOISE_KINDS = ("uniform", "rademacher", "none")


def _transform_uniform(kind, u):
    if kind == "uniform":
        return 2.0 * u - 1.0
    if kind == "rademacher":
        return np.where(u < 0.5, -1.0, 1.0)
    return np.zeros_like(u)


class AffineProblem(StochasticProblem):
    """F(v, x) = A x + b + level * v with coordinatewise bounded noise.

    ``uniform`` noise is uniform on [-1, 1] per coordinate (variance 1/3),
    ``rademacher`` is +-1 with equal probability (variance 1).

    Parameters
    ----------
    A : (n, n) array_like
    b : (n,) array_like
    layout : BlockLayout, optional
    noise : {"uniform", "rademacher", "none"}
    noise_level : float
    solution : SolutionSpec, optional
    """

    def __init__(self, A, b, layout=None, noise="uniform", noise_level=0.0, solution=None):
        A = np.array(A, dtype=np.float64)
        b = np.array(b, dtype=np.float64).reshape(-1)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != b.size:
            raise UsageError("A must be square and match b")
        if noise not in _NOISE_KINDS:
            raise UsageError(f"noise must be one of {_NOISE_KINDS}")
        if noise_level < 0:
            raise UsageError("noise_level must be nonnegative")
        layout = layout or BlockLayout.single(b.size)
        if layout.n != b.size:
            raise LayoutError("layout does not match the operator dimension")
        A.flags.writeable = False
        b.flags.writeable = False
        self.A = A
        self.b = b
        self.noise = noise
        self.noise_level = float(noise_level)
        var = {"uniform": 1.0 / 3.0, "rademacher": 1.0, "none": 0.0}[noise]
        slices = [layout.slice(j) for j in range(layout.m)]
        level = self.noise_level

        def block_operator(j, v_j, x):
            s = slices[j]
            return A[s] @ x + b[s] + level * v_j

        super().__init__(
            layout,
            block_operator,
            layout.sizes,
            noise_map=lambda j, u: _transform_uniform(noise, u),
            mean_operator=lambda x: A @ x + b,
            lipschitz_L=float(np.linalg.norm(A, 2)),
            variance_bound=level**2 * var * b.size,
            solution=solution,
        )

    @property
    def is_skew(self):
        return bool(np.allclose(self.A + self.A.T, 0.0, atol=1e-14))


@dataclass(frozen=True)
class SolutionSpec:
    """Exact description of the solution set X*.

    Parameters
    ----------
    project : callable
        Euclidean projection onto X*.
    least_norm_solution : ndarray, optional
    sharpness_rho : float, optional
        Weak-sharpness modulus rho.
    vertices : ndarray, optional
        Extreme points of X* when it is a polytope.
    """

    project: Callable
    least_norm_solution: Optional[np.ndarray] = None
    sharpness_rho: Optional[float] = None
    vertices: Optional[np.ndarray] = field(default=None, repr=False)

    def project_onto_solution_set(self, x):
        return _like(x, np.asarray(self.project(as_array(x)), dtype=np.float64))

    def distance(self, x):
        arr = as_array(x)
        return float(np.linalg.norm(arr - self.project(arr)))

    @classmethod
    def point(cls, p, sharpness_rho=None):
        p = np.array(p, dtype=np.float64).reshape(-1)
        p.flags.writeable = False
        return cls(lambda x: p.copy(), p, sharpness_rho, p[None, :])

    @classmethod
    def segment(cls, a, b, least_norm=None):
        """Segment [a, b]; the least-norm point is computed when not given."""
        a = np.array(a, dtype=np.float64).reshape(-1)
        b = np.array(b, dtype=np.float64).reshape(-1)
        d = b - a
        dd = float(d @ d)

        def project(x):
            t = min(max(float((x - a) @ d) / dd, 0.0), 1.0)
            return a + t * d

        if least_norm is None:
            least_norm = project(np.zeros_like(a))
        return cls(project, np.asarray(least_norm, dtype=np.float64), None, np.stack([a, b]))
