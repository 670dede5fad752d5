"""Block-structured problems: variables, feasible sets, objectives and the
pathological fixtures that show where block methods go wrong."""

import logging
from typing import Callable, Optional, Tuple

import numpy as np
from attrs import define, field

from .errors import DimensionMismatchError, InfeasibleError, UnsupportedOperationError
from .utils import (  # noqa: F401  (re-exported I/O helpers)
    read_matrix,
    read_tensor,
    read_vector,
    soft_threshold,
    write_matrix,
    write_tensor,
)

# Set a basic logging level
logging.basicConfig(level=logging.INFO)

# Logging for this package
logger = logging.getLogger(__name__)

# Set logging level for this package
logger.setLevel(logging.DEBUG)

SET_KINDS = ("unconstrained", "box", "nonneg", "ball", "simplex")
BEHAVIOR_KINDS = ("stuck_point", "cycle", "oscillation", "converges_to")
PATHOLOGY_NAMES = (
    "ex2_l1_nonregular",
    "ex4_coupling",
    "ex5_linear_bound",
    "ex6_powell",
    "naive_parallel",
)
DEFAULT_LADDER = (1e-3, 1e-4, 1e-5)
FEASIBILITY_TOL = 1e-12


def _freeze(a):
    arr = np.array(a)
    arr = arr.astype(complex if np.iscomplexobj(arr) else float).reshape(-1)
    arr.setflags(write=False)
    return arr


def _freeze_blocks(blocks):
    frozen = tuple(_freeze(b) for b in blocks)
    for i, b in enumerate(frozen):
        if b.size == 0:
            raise ValueError(f"Block {i} is empty; block dimensions must be positive")
    return frozen


@define(frozen=True, eq=False)
class BlockVector:
    """An iterate x = (x_1, ..., x_n) split into blocks of fixed sizes.

    Blocks are stored as read-only 1-D arrays, so a BlockVector can be shared
    freely; updates return a new instance.
    """

    blocks: Tuple[np.ndarray, ...] = field(converter=_freeze_blocks)

    @classmethod
    def from_blocks(cls, blocks):
        return cls(tuple(blocks))

    @classmethod
    def zeros(cls, dims, dtype=float):
        return cls(tuple(np.zeros(int(m), dtype=dtype) for m in dims))

    @classmethod
    def from_flat(cls, flat, dims):
        flat = np.asarray(flat).reshape(-1)
        dims = tuple(int(m) for m in dims)
        if flat.size != sum(dims):
            raise DimensionMismatchError("flat", sum(dims), flat.size, what="vector")
        cuts = np.cumsum(dims)[:-1]
        return cls(tuple(np.split(flat, cuts)))

    @property
    def dims(self):
        return tuple(b.size for b in self.blocks)

    @property
    def n_blocks(self):
        return len(self.blocks)

    @property
    def size(self):
        return sum(self.dims)

    @property
    def is_complex(self):
        return any(np.iscomplexobj(b) for b in self.blocks)

    def __len__(self):
        return len(self.blocks)

    def __getitem__(self, i):
        return self.blocks[i]

    def flatten(self):
        return np.concatenate(self.blocks)

    def replace_block(self, i, value):
        return self.replace_blocks({i: value})

    def replace_blocks(self, updates):
        blocks = list(self.blocks)
        for i, value in updates.items():
            value = np.asarray(value).reshape(-1)
            if value.size != blocks[i].size:
                raise DimensionMismatchError(i, blocks[i].size, value.size)
            blocks[i] = value
        return BlockVector(tuple(blocks))

    def __repr__(self):
        inner = ", ".join(np.array2string(b, precision=6) for b in self.blocks)
        return f"BlockVector({inner})"


def _as_bound(v, dimension):
    arr = np.broadcast_to(np.asarray(v, dtype=float), (dimension,)).copy()
    arr.setflags(write=False)
    return arr


def _optional_bound(v):
    if v is None:
        return None
    arr = np.array(v, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


@define(frozen=True, eq=False)
class FeasibleSet:
    """A closed convex set X_i with an exact Euclidean projection."""

    kind: str
    dimension: int = field(converter=int)
    lo: Optional[np.ndarray] = field(default=None, converter=_optional_bound)
    hi: Optional[np.ndarray] = field(default=None, converter=_optional_bound)
    radius: Optional[float] = None

    def __attrs_post_init__(self):
        if self.kind not in SET_KINDS:
            raise ValueError(f"Unknown set kind {self.kind!r}; valid kinds: {', '.join(SET_KINDS)}")
        if self.dimension < 1:
            raise ValueError("Set dimension must be positive")
        for name in ("lo", "hi"):
            bound = getattr(self, name)
            if bound is None or bound.size == self.dimension:
                continue
            if bound.size != 1:
                raise ValueError(f"Bound {name} has {bound.size} entries for a set of dimension {self.dimension}")
            # scalar bounds broadcast to the set dimension
            object.__setattr__(self, name, _as_bound(bound[0], self.dimension))
        if self.kind == "box":
            if self.lo is None or self.hi is None or np.any(self.lo > self.hi):
                raise ValueError("Box bounds must satisfy lo <= hi entrywise")
        if self.kind == "ball" and not (self.radius is not None and self.radius > 0):
            raise ValueError("Ball radius must be positive")

    @classmethod
    def unconstrained(cls, dimension):
        return cls("unconstrained", int(dimension))

    @classmethod
    def box(cls, lo, hi, dimension=None):
        if dimension is None:
            dimension = max(np.size(lo), np.size(hi))
        return cls("box", int(dimension), lo=_as_bound(lo, dimension), hi=_as_bound(hi, dimension))

    @classmethod
    def nonneg(cls, dimension):
        return cls("nonneg", int(dimension))

    @classmethod
    def ball(cls, radius, dimension):
        return cls("ball", int(dimension), radius=float(radius))

    @classmethod
    def simplex(cls, dimension):
        return cls("simplex", int(dimension))

    @property
    def is_separable(self):
        return self.kind in ("unconstrained", "box", "nonneg")

    @property
    def is_bounded(self):
        if self.kind == "box":
            return bool(np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi)))
        return self.kind in ("ball", "simplex")

    def project(self, v):
        v = np.asarray(v)
        if v.size != self.dimension:
            raise DimensionMismatchError(self.kind, self.dimension, v.size, what="set")
        v = v.reshape(-1)
        if self.kind == "unconstrained":
            return v.copy()
        if self.kind == "box":
            return np.clip(v, self.lo, self.hi)
        if self.kind == "nonneg":
            return np.maximum(v, 0.0)
        if self.kind == "ball":
            norm = np.linalg.norm(v)
            return v * (self.radius / norm) if norm > self.radius else v.copy()
        return _project_simplex(v)

    def contains(self, v, tol=FEASIBILITY_TOL):
        v = np.asarray(v).reshape(-1)
        if self.kind == "unconstrained":
            return bool(np.all(np.isfinite(v)))
        if self.kind == "box":
            return bool(np.all(v >= self.lo - tol) and np.all(v <= self.hi + tol))
        if self.kind == "nonneg":
            return bool(np.all(v >= -tol))
        if self.kind == "ball":
            return bool(np.linalg.norm(v) <= self.radius + tol)
        return bool(np.all(v >= -tol) and abs(np.sum(v) - 1.0) <= tol)

    def distance(self, v):
        return float(np.linalg.norm(np.asarray(v).reshape(-1) - self.project(v)))

    def sample(self, rng, n, center=None, scale=1.0):
        """Draw n feasible points, concentrated around `center` when the set is unbounded."""
        d = self.dimension
        center = np.zeros(d) if center is None else np.real(np.asarray(center, dtype=complex)).reshape(-1)
        if self.kind == "box" and self.is_bounded:
            return rng.uniform(self.lo, self.hi, size=(n, d))
        if self.kind == "ball":
            directions = rng.standard_normal((n, d))
            directions /= np.linalg.norm(directions, axis=1, keepdims=True)
            radii = self.radius * rng.uniform(size=(n, 1)) ** (1.0 / d)
            return directions * radii
        if self.kind == "simplex":
            return rng.dirichlet(np.ones(d), size=n)
        raw = center + scale * rng.standard_normal((n, d))
        return np.array([self.project(row) for row in raw])


def _project_simplex(v):
    """Sort-based Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, v.size + 1)
    rho = np.nonzero(u - (css - 1.0) / ks > 0)[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1)
    return np.maximum(v - theta, 0.0)


def project(fset, v):
    return fset.project(v)


@define(frozen=True, eq=False)
class Nonsmooth:
    """A block term h_i with an optional proximal map prox(v, t) = argmin h(y) + |y - v|^2 / (2t).

    `quadratic` holds (Q, q, c) when h(y) = y'Qy/2 + q'y + c, so that solvers
    which assemble normal equations can absorb it directly.
    """

    value: Callable[[np.ndarray], float]
    prox: Optional[Callable] = None
    name: str = "h"
    weight: Optional[float] = None
    quadratic: Optional[tuple] = None

    def __call__(self, v):
        return float(self.value(np.asarray(v)))


def l1_norm(lam):
    lam = float(lam)
    if lam < 0:
        raise ValueError("l1 weight must be nonnegative")
    return Nonsmooth(
        value=lambda v: lam * float(np.sum(np.abs(v))),
        prox=lambda v, t: soft_threshold(v, lam * np.asarray(t)),
        name=f"{lam:g}*l1",
        weight=lam,
    )


def quadratic_penalty(B, e):
    """h(y) = |By - e|^2 / 2, with its proximal map solved in closed form."""
    B = np.asarray(B, dtype=float)
    e = np.asarray(e, dtype=float).reshape(-1)
    BtB = B.T @ B
    Bte = B.T @ e

    def prox(v, t):
        return np.linalg.solve(np.eye(BtB.shape[0]) + t * BtB, v + t * Bte)

    return Nonsmooth(
        value=lambda y: 0.5 * float(np.sum((B @ y - e) ** 2)),
        prox=prox,
        name="quadratic",
        quadratic=(BtB, -Bte, 0.5 * float(e @ e)),
    )


@define(frozen=True, eq=False)
class Coupling:
    """Linear coupling sum_i A_i x_i = b across blocks."""

    matrices: Tuple[np.ndarray, ...] = field(converter=lambda ms: tuple(np.atleast_2d(np.asarray(m, dtype=float)) for m in ms))
    rhs: np.ndarray = field(converter=lambda b: np.asarray(b, dtype=float).reshape(-1))

    def product(self, x, skip=None):
        total = np.zeros_like(self.rhs)
        for j, A in enumerate(self.matrices):
            if j != skip:
                total = total + A @ x[j]
        return total

    def residual(self, x):
        return self.product(x) - self.rhs

    def residual_norm(self, x):
        return float(np.linalg.norm(self.residual(x)))


@define(frozen=True, eq=False)
class JensenStructure:
    """f(x) = F(a_1'x_1, ..., a_n'x_n) with F convex in each argument."""

    coefficients: Tuple[np.ndarray, ...] = field(converter=lambda cs: tuple(np.asarray(c, dtype=float).reshape(-1) for c in cs))
    outer: Callable[[np.ndarray], float]
    outer_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def inner(self, x):
        return np.array([float(a @ xi) for a, xi in zip(self.coefficients, x.blocks)])


@define(frozen=True)
class KnownOptimum:
    value: float
    provenance: str


@define(eq=False)
class Problem:
    """f(x) = g(x) + sum_i h_i(x_i) over X_1 x ... x X_n, optionally coupled by sum_i A_i x_i = b.

    Either `smooth` (with `smooth_grad(x, i)` for gradient-based surrogates) or
    a whole `objective` must be given. `block_minimizer(i, z, gamma)` returns an
    exact minimizer of f(., z_{-i}) + gamma/2 |. - z_i|^2 over X_i when one is
    known in closed form.
    """

    dims: Tuple[int, ...] = field(converter=lambda ds: tuple(int(m) for m in ds))
    sets: Optional[tuple] = None
    smooth: Optional[Callable] = None
    smooth_grad: Optional[Callable] = None
    nonsmooth: Optional[tuple] = None
    objective: Optional[Callable] = None
    coupling: Optional[Coupling] = None
    name: str = "problem"
    known_optimum: Optional[KnownOptimum] = None
    block_minimizer: Optional[Callable] = None
    block_lipschitz: Optional[tuple] = None
    jensen: Optional[JensenStructure] = None
    convex: bool = False

    def __attrs_post_init__(self):
        n = len(self.dims)
        if n == 0 or any(m < 1 for m in self.dims):
            raise ValueError("A problem needs at least one block of positive dimension")
        if self.sets is None:
            self.sets = tuple(FeasibleSet.unconstrained(m) for m in self.dims)
        self.sets = tuple(self.sets)
        if self.nonsmooth is None:
            self.nonsmooth = (None,) * n
        self.nonsmooth = tuple(self.nonsmooth)
        if len(self.sets) != n:
            raise DimensionMismatchError("sets", n, len(self.sets), what="count of")
        if len(self.nonsmooth) != n:
            raise DimensionMismatchError("nonsmooth parts", n, len(self.nonsmooth), what="count of")
        for i, (m, s) in enumerate(zip(self.dims, self.sets)):
            if s.dimension != m:
                raise DimensionMismatchError(i, m, s.dimension, what="feasible set of block")
        if self.smooth is None and self.objective is None:
            raise ValueError("Problem needs a smooth part or a whole objective")
        if self.coupling is not None:
            if len(self.coupling.matrices) != n:
                raise DimensionMismatchError("coupling", n, len(self.coupling.matrices), what="count of")
            rows = self.coupling.rhs.size
            for i, (m, A) in enumerate(zip(self.dims, self.coupling.matrices)):
                if A.shape != (rows, m):
                    raise DimensionMismatchError(i, (rows, m), A.shape, what="coupling matrix of block")
        if self.block_lipschitz is not None:
            self.block_lipschitz = tuple(float(L) for L in self.block_lipschitz)

    @property
    def n_blocks(self):
        return len(self.dims)

    @property
    def is_composite(self):
        """True when f = g + sum h_i with a gradient for g."""
        return self.objective is None and self.smooth_grad is not None

    def check_point(self, x):
        if not isinstance(x, BlockVector):
            raise TypeError(f"Expected a BlockVector, got {type(x).__name__}")
        if x.n_blocks != self.n_blocks:
            raise DimensionMismatchError("count", self.n_blocks, x.n_blocks, what="block")
        for i, (m, b) in enumerate(zip(self.dims, x.blocks)):
            if b.size != m:
                raise DimensionMismatchError(i, m, b.size)

    def is_feasible(self, x, tol=FEASIBILITY_TOL):
        return all(s.contains(b, tol) for s, b in zip(self.sets, x.blocks))

    def project(self, x):
        return BlockVector(tuple(s.project(b) for s, b in zip(self.sets, x.blocks)))

    def start_point(self):
        """Projection of zeros onto X."""
        return self.project(BlockVector.zeros(self.dims))


def eval_objective(problem, x):
    problem.check_point(x)
    if problem.objective is not None:
        return float(problem.objective(x))
    value = float(problem.smooth(x))
    for h, b in zip(problem.nonsmooth, x.blocks):
        if h is not None:
            value += h(b)
    return value


def eval_smooth(problem, x):
    problem.check_point(x)
    if problem.smooth is None:
        raise UnsupportedOperationError(f"{problem.name} has no smooth part")
    return float(problem.smooth(x))


def eval_block_gradient(problem, i, x):
    problem.check_point(x)
    if problem.smooth_grad is None:
        raise UnsupportedOperationError(f"{problem.name} has no gradient evaluator")
    grad = np.asarray(problem.smooth_grad(x, i)).reshape(-1)
    if grad.size != problem.dims[i]:
        raise DimensionMismatchError(i, problem.dims[i], grad.size, what="gradient of block")
    return grad


def prox_residual(problem, x):
    """|x - P_X(prox_h(x - grad g(x)))|, or None when the problem is not composite-smooth."""
    if not problem.is_composite:
        return None
    parts = []
    for i, (s, h, b) in enumerate(zip(problem.sets, problem.nonsmooth, x.blocks)):
        v = b - eval_block_gradient(problem, i, x)
        if h is not None:
            if h.prox is None:
                return None
            v = h.prox(v, 1.0)
        parts.append(b - s.project(v))
    return float(np.linalg.norm(np.concatenate(parts)))


def directional_derivative(problem, x, d, steps=DEFAULT_LADDER):
    """Estimate f'(x; d) from one-sided difference quotients on a step ladder.

    Consecutive quotients are Richardson-extrapolated and the smallest
    extrapolated value is returned as the liminf estimate. Larger ladder steps
    that leave X are dropped; the smallest must stay feasible.
    """
    problem.check_point(x)
    flat_d = d.flatten() if isinstance(d, BlockVector) else np.asarray(d).reshape(-1)
    if flat_d.size != x.size:
        raise DimensionMismatchError("direction", x.size, flat_d.size, what="vector")
    dims = x.dims

    def value(v):
        return eval_objective(problem, BlockVector.from_flat(v, dims))

    def feasible(v):
        return problem.is_feasible(BlockVector.from_flat(v, dims))

    return ladder_derivative(value, x.flatten(), flat_d, feasible, steps)


def ladder_derivative(value, base, d, feasible=None, steps=DEFAULT_LADDER):
    """One-sided derivative of a flat function along d, estimated as in directional_derivative."""
    steps = sorted((float(s) for s in steps), reverse=True)
    f0 = value(base)
    quotients = []
    for lam in steps:
        trial = base + lam * d
        if feasible is not None and not feasible(trial):
            if lam == steps[-1]:
                raise InfeasibleError(f"x + {lam:g} d leaves the feasible set")
            quotients = []
            continue
        quotients.append((lam, (value(trial) - f0) / lam))
    if len(quotients) == 1:
        return quotients[0][1]
    extrapolated = [
        (lam_big * q_small - lam_small * q_big) / (lam_big - lam_small)
        for (lam_big, q_big), (lam_small, q_small) in zip(quotients[:-1], quotients[1:])
    ]
    return float(min(extrapolated))


@define(frozen=True, eq=False)
class ExpectedBehavior:
    kind: str
    points: tuple = ()
    period: Optional[int] = None
    value: Optional[float] = None
    note: str = ""

    def __attrs_post_init__(self):
        if self.kind not in BEHAVIOR_KINDS:
            raise ValueError(f"Unknown behavior {self.kind!r}")


@define(frozen=True, eq=False)
class PathologyFixture:
    name: str
    problem: Problem
    start: BlockVector
    expected_behavior: ExpectedBehavior

    def __attrs_post_init__(self):
        self.problem.check_point(self.start)
        if not self.problem.is_feasible(self.start):
            raise InfeasibleError(f"Start of {self.name} is infeasible")


def _scalar_blocks(*values):
    return BlockVector(tuple(np.array([float(v)]) for v in values))


def _l1_line_minimizer(slopes, offsets, gamma, z):
    """Minimize sum_k |a_k t + c_k| + gamma/2 (t - z)^2 over the real line.

    Candidates are the breakpoints, z itself and, for gamma > 0, the stationary
    point of every linear piece; among minimizers the one nearest z wins.
    """
    active = slopes != 0
    points = np.sort(-offsets[active] / slopes[active])
    candidates = list(points) + [z]
    if gamma > 0:
        midpoints = np.concatenate(([points[0] - 1.0] if points.size else [z], (points[:-1] + points[1:]) / 2, [points[-1] + 1.0] if points.size else []))
        for t in midpoints:
            slope = float(np.sum(slopes * np.sign(slopes * t + offsets)))
            candidates.append(z - slope / gamma)

    def phi(t):
        return float(np.sum(np.abs(slopes * t + offsets)) + 0.5 * gamma * (t - z) ** 2)

    values = np.array([phi(t) for t in candidates])
    best = values.min()
    ties = [t for t, v in zip(candidates, values) if v <= best + 1e-12 * max(1.0, abs(best))]
    return min(ties, key=lambda t: abs(t - z))


def _ex2_l1_nonregular(**_):
    A = np.array([[3.0, 4.0], [2.0, 1.0]])

    def objective(x):
        return float(np.sum(np.abs(A @ x.flatten())))

    def block_minimizer(i, z, gamma):
        flat = z.flatten()
        offsets = A @ flat - A[:, i] * flat[i]
        return np.array([_l1_line_minimizer(A[:, i], offsets, gamma, flat[i])])

    problem = Problem(
        dims=(1, 1),
        objective=objective,
        name="ex2_l1_nonregular",
        known_optimum=KnownOptimum(0.0, "DERIVED: |A 0|_1 = 0 at the unique stationary point (0, 0)"),
        block_minimizer=block_minimizer,
        convex=True,
    )
    start = _scalar_blocks(-4.0, 3.0)
    behavior = ExpectedBehavior("stuck_point", points=(np.array([-4.0, 3.0]),))
    return problem, start, behavior


def _ex4_coupling(**_):
    def smooth(x):
        return float(x[0][0] ** 2 + x[1][0] ** 2)

    def grad(x, i):
        return 2.0 * x[i]

    def block_minimizer(i, z, gamma):
        return gamma * z[i] / (2.0 + gamma)

    problem = Problem(
        dims=(1, 1),
        smooth=smooth,
        smooth_grad=grad,
        coupling=Coupling(([[1.0]], [[1.0]]), [2.0]),
        name="ex4_coupling",
        known_optimum=KnownOptimum(2.0, "DERIVED: x1 + x2 = 2 forces f >= 2, attained at (1, 1)"),
        block_minimizer=block_minimizer,
        block_lipschitz=(2.0, 2.0),
        convex=True,
    )
    start = _scalar_blocks(0.0, 2.0)
    behavior = ExpectedBehavior("stuck_point", points=(np.array([0.0, 2.0]),))
    return problem, start, behavior


def _ex5_linear_bound(bounded=True, **_):
    if bounded:
        sets = (FeasibleSet.box(-1.0, 1.0, 1), FeasibleSet.box(-1.0, 1.0, 1))
    else:
        sets = (FeasibleSet.unconstrained(1), FeasibleSet.unconstrained(1))

    def smooth(x):
        return float((x[0][0] + x[1][0]) ** 2)

    def grad(x, i):
        return np.array([2.0 * (x[0][0] + x[1][0])])

    def block_minimizer(i, z, gamma):
        other = z[1 - i][0]
        t = (gamma * z[i][0] - 2.0 * other) / (2.0 + gamma)
        return sets[i].project(np.array([t]))

    problem = Problem(
        dims=(1, 1),
        sets=sets,
        smooth=smooth,
        smooth_grad=grad,
        name="ex5_linear_bound",
        known_optimum=KnownOptimum(0.0, "DERIVED: optimal value 0 on the line x1 = -x2"),
        block_minimizer=block_minimizer,
        block_lipschitz=(2.0, 2.0),
        convex=True,
    )
    start = _scalar_blocks(1.0, 1.0)
    behavior = ExpectedBehavior(
        "oscillation",
        points=(np.array([1.0, 1.0]), np.array([-1.0, -1.0])),
        period=2,
        note="simultaneous linear-surrogate updates swap between opposite corners",
    )
    return problem, start, behavior


def _powell_block(s, z, gamma):
    """argmin_t -t s + (t-1)_+^2 + (-t-1)_+^2 + gamma/2 (t - z)^2."""
    if gamma == 0:
        if s == 0:
            return float(np.clip(z, -1.0, 1.0))
        return float((1.0 + 0.5 * abs(s)) * np.sign(s))
    t = z + s / gamma
    if t > 1.0:
        return (s + 2.0 + gamma * z) / (2.0 + gamma)
    if t < -1.0:
        return (s - 2.0 + gamma * z) / (2.0 + gamma)
    return t


def _ex6_powell(epsilon=1e-2, bound=None, **_):
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if bound is None:
        sets = tuple(FeasibleSet.unconstrained(1) for _ in range(3))
    else:
        if bound < 1.0 + epsilon:
            raise ValueError("bound must leave the start point inside the box")
        sets = tuple(FeasibleSet.box(-bound, bound, 1) for _ in range(3))

    def smooth(x):
        v = x.flatten()
        cross = v[0] * v[1] + v[1] * v[2] + v[2] * v[0]
        return float(-cross + np.sum(np.maximum(v - 1.0, 0.0) ** 2 + np.maximum(-v - 1.0, 0.0) ** 2))

    def grad(x, i):
        v = x.flatten()
        s = v.sum() - v[i]
        return np.array([-s + 2.0 * max(v[i] - 1.0, 0.0) - 2.0 * max(-v[i] - 1.0, 0.0)])

    def block_minimizer(i, z, gamma):
        v = z.flatten()
        t = _powell_block(v.sum() - v[i], v[i], gamma)
        return sets[i].project(np.array([t]))

    problem = Problem(
        dims=(1, 1, 1),
        sets=sets,
        smooth=smooth,
        smooth_grad=grad,
        name="ex6_powell" if bound is None else f"ex6_powell_box{bound:g}",
        block_minimizer=block_minimizer,
        block_lipschitz=(2.0, 2.0, 2.0),
    )
    start = _scalar_blocks(-1.0 - epsilon, 1.0 + epsilon / 2, -1.0 - epsilon / 4)
    patterns = (
        (1, 1, -1),
        (1, -1, -1),
        (1, -1, 1),
        (-1, -1, 1),
        (-1, 1, 1),
        (-1, 1, -1),
    )
    behavior = ExpectedBehavior(
        "cycle",
        points=tuple(np.array(p, dtype=float) for p in patterns),
        period=6,
        note="exact cyclic updates; the unrestricted function is unbounded below along +-(1,1,1)",
    )
    return problem, start, behavior


def _naive_parallel(**_):
    sets = (FeasibleSet.box(-1.0, 1.0, 1), FeasibleSet.box(-1.0, 1.0, 1))

    def smooth(x):
        return float((x[0][0] - x[1][0]) ** 2)

    def grad(x, i):
        diff = x[0][0] - x[1][0]
        return np.array([2.0 * diff if i == 0 else -2.0 * diff])

    def block_minimizer(i, z, gamma):
        t = (2.0 * z[1 - i][0] + gamma * z[i][0]) / (2.0 + gamma)
        return sets[i].project(np.array([t]))

    problem = Problem(
        dims=(1, 1),
        sets=sets,
        smooth=smooth,
        smooth_grad=grad,
        name="naive_parallel",
        known_optimum=KnownOptimum(0.0, "DERIVED: any x1 = x2 is optimal"),
        block_minimizer=block_minimizer,
        block_lipschitz=(2.0, 2.0),
        convex=True,
    )
    start = _scalar_blocks(1.0, -1.0)
    behavior = ExpectedBehavior(
        "oscillation",
        points=(np.array([1.0, -1.0]), np.array([-1.0, 1.0])),
        period=2,
    )
    return problem, start, behavior


_PATHOLOGIES = {
    "ex2_l1_nonregular": _ex2_l1_nonregular,
    "ex4_coupling": _ex4_coupling,
    "ex5_linear_bound": _ex5_linear_bound,
    "ex6_powell": _ex6_powell,
    "naive_parallel": _naive_parallel,
}


def build_pathology(name, **params):
    """Build one of the fixtures on which block methods stall, cycle or oscillate.

    Args:
        name: one of PATHOLOGY_NAMES
        params: fixture options; `epsilon` and `bound` for ex6_powell,
            `bounded` for ex5_linear_bound

    Returns:
        PathologyFixture
    """
    if name not in _PATHOLOGIES:
        raise ValueError(f"Unknown pathology {name!r}; valid names: {', '.join(PATHOLOGY_NAMES)}")
    problem, start, behavior = _PATHOLOGIES[name](**params)
    return PathologyFixture(name, problem, start, behavior)
