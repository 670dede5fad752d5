"""Iteration drivers: BSUM, parallel PSCA, stochastic SSUM and the coupled BSUMM,
with shared stopping logic, cycle detection and trace emission."""

import logging
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from itertools import count
from typing import Optional

import numpy as np
import pandas as pd
from attrs import Factory, define, field

from .core import BlockVector, eval_objective, prox_residual
from .errors import (
    BudgetExceededError,
    CouplingError,
    InfeasibleError,
    UnboundedSubproblemError,
    UnsupportedOperationError,
)
from .selection import Candidates, SelectionRule
from .surrogates import (
    InnerBudget,
    estimate_block_lipschitz,
    minimize_block_surrogate,
    prox_gradient_loop,
    resolve_phi,
    surrogate_gradient,
    surrogate_value,
)
from .utils import blocks_label, parse_blocks_label

# Set a basic logging level
logging.basicConfig(level=logging.INFO)

# Logging for this package
logger = logging.getLogger(__name__)

# Set logging level for this package
logger.setLevel(logging.DEBUG)

TERMINAL_STATUSES = ("converged", "max_iters", "budget", "detected_cycle", "diverged")
TRACE_COLUMNS = ["r", "blocks", "f", "step_norm", "stat_gap", "feas_residual", "wall_ms"]
CYCLE_GRID = 1e-9
CYCLE_WINDOW = 50
CYCLE_MIN_STEP = 1e-6
SETTLE_TOL = 1e-4


def _optional_positive(name):
    def check(instance, attribute, value):
        if value is not None and value <= 0:
            raise ValueError(f"{name} must be positive or None")

    return check


@define(frozen=True)
class StopCriteria:
    """When to stop a driver. A criterion set to None is disabled."""

    max_iters: Optional[int] = field(default=100000, validator=_optional_positive("max_iters"))
    objective_rel_change_tol: Optional[float] = 1e-10
    stationarity_tol: Optional[float] = 1e-8
    wall_clock_limit: Optional[float] = field(default=None, validator=_optional_positive("wall_clock_limit"))
    step_tol: Optional[float] = None
    step_ord: Optional[float] = 2
    feasibility_tol: Optional[float] = 1e-8
    divergence_threshold: Optional[float] = 1e12

    def __attrs_post_init__(self):
        finite = (
            self.max_iters,
            self.objective_rel_change_tol,
            self.stationarity_tol,
            self.wall_clock_limit,
            self.step_tol,
        )
        if all(c is None for c in finite):
            raise ValueError("At least one stopping criterion must be set")


@define(frozen=True)
class TraceRecord:
    r: int
    blocks: tuple
    f: float
    step_norm: float
    stat_gap: Optional[float] = None
    feas_residual: Optional[float] = None
    wall_ms: Optional[float] = None


@define(frozen=True, eq=False)
class CycleInfo:
    first_r: int
    period: int
    points: tuple


@define(eq=False)
class Trace:
    """Per-iteration records of a run plus how it ended."""

    records: list = Factory(list)
    terminal_status: Optional[str] = None
    notes: list = Factory(list)
    cycle: Optional[CycleInfo] = None
    initial_f: Optional[float] = None
    iterates: Optional[list] = None
    extras: dict = Factory(dict)

    def __len__(self):
        return len(self.records)

    def note(self, message):
        if message not in self.notes:
            logger.warning(message)
            self.notes.append(message)

    @property
    def objective_values(self):
        return np.array([rec.f for rec in self.records], dtype=float)

    @property
    def final_f(self):
        return self.records[-1].f if self.records else self.initial_f

    def to_frame(self, timing=True):
        rows = [
            {
                "r": rec.r,
                "blocks": blocks_label(rec.blocks),
                "f": rec.f,
                "step_norm": rec.step_norm,
                "stat_gap": rec.stat_gap,
                "feas_residual": rec.feas_residual,
                "wall_ms": rec.wall_ms if timing else None,
            }
            for rec in self.records
        ]
        return pd.DataFrame(rows, columns=TRACE_COLUMNS)

    def to_csv(self, path, timing=False):
        """Write the documented CSV layout; wall times are left empty unless `timing`."""
        self.to_frame(timing=timing).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

    @classmethod
    def from_csv(cls, path):
        df = pd.read_csv(path, dtype={"blocks": str}, keep_default_na=True)
        missing = set(TRACE_COLUMNS) - set(df.columns)
        if missing:
            raise ValueError(f"{path} is missing trace columns {sorted(missing)}")

        def opt(v):
            return None if pd.isna(v) else float(v)

        records = [
            TraceRecord(
                int(row["r"]),
                parse_blocks_label(row["blocks"]),
                float(row["f"]),
                float(row["step_norm"]),
                opt(row["stat_gap"]),
                opt(row["feas_residual"]),
                opt(row["wall_ms"]),
            )
            for _, row in df.iterrows()
        ]
        return cls(records=records)


@define(frozen=True)
class StepsizeSchedule:
    kind: str
    gamma0: float = 1.0
    exponent: float = 1.0
    offset: float = 2.0

    def __attrs_post_init__(self):
        if self.kind not in ("constant", "diminishing"):
            raise ValueError(f"Unknown stepsize schedule {self.kind!r}")
        if self.gamma0 <= 0:
            raise ValueError("Stepsize must be positive")

    @classmethod
    def constant(cls, gamma):
        return cls("constant", gamma0=float(gamma))

    @classmethod
    def diminishing(cls, gamma0=2.0, exponent=1.0, offset=2.0):
        return cls("diminishing", gamma0=float(gamma0), exponent=float(exponent), offset=float(offset))

    def value(self, r):
        if self.kind == "constant":
            return self.gamma0
        return self.gamma0 / (r + self.offset) ** self.exponent


def _cycle_key(flat):
    parts = np.concatenate([np.real(flat), np.imag(flat)]) if np.iscomplexobj(flat) else flat
    return (np.round(parts / CYCLE_GRID) + 0.0).tobytes()


def _drive(
    name,
    x0,
    stop,
    advance,
    objective,
    window,
    trace=None,
    gap=None,
    feasibility=None,
    after_iteration=None,
    keep_iterates=False,
    detect_cycles=True,
    initial_f="eval",
):
    """Shared iteration loop.

    `advance(r, x)` returns (blocks, x_new) for iteration r >= 1. Stops are
    checked in the order divergence, cycle, stationarity, relative change,
    step size, wall clock, iteration count.
    """
    trace = Trace() if trace is None else trace
    x = x0
    trace.initial_f = objective(x) if initial_f == "eval" else initial_f
    if keep_iterates:
        trace.iterates = [x]
    f_hist = deque([trace.initial_f], maxlen=window + 1)
    steps = deque(maxlen=window)
    flat = x.flatten()
    seen = deque([(_cycle_key(flat), 0, flat)], maxlen=CYCLE_WINDOW)
    start = time.perf_counter()
    status = None
    last_r = 0
    logger.info(f"Running {name} ...")

    for r in count(1):
        if stop.max_iters is not None and r > stop.max_iters:
            status = "max_iters"
            break
        last_r = r
        try:
            blocks, x_new = advance(r, x)
        except UnboundedSubproblemError as e:
            trace.note(f"r={r}: {e}")
            status = "diverged"
            break
        if after_iteration is not None:
            after_iteration(r, x_new, trace)
        f = objective(x_new)
        new_flat = x_new.flatten()
        step = float(np.linalg.norm(new_flat - flat, ord=stop.step_ord))
        residual = feasibility(x_new) if feasibility is not None else None
        stat = gap(x_new) if gap is not None else None
        wall_ms = (time.perf_counter() - start) * 1000.0
        trace.records.append(TraceRecord(r, tuple(blocks), f, step, stat, residual, wall_ms))
        if keep_iterates:
            trace.iterates.append(x_new)
        x, flat = x_new, new_flat
        f_hist.append(f)
        steps.append(step)

        if not np.isfinite(f) or (
            stop.divergence_threshold is not None and np.max(np.abs(flat)) > stop.divergence_threshold
        ):
            status = "diverged"
            break

        key = _cycle_key(flat)
        if detect_cycles and step > CYCLE_MIN_STEP and key != seen[-1][0]:
            match = next((entry for entry in seen if entry[0] == key), None)
            if match is not None:
                _, first_r, _ = match
                points = tuple(p for _, k, p in seen if k >= first_r)
                trace.cycle = CycleInfo(first_r, r - first_r, points)
                status = "detected_cycle"
                break
        seen.append((key, r, flat))

        feasible = residual is None or stop.feasibility_tol is None or residual <= stop.feasibility_tol
        settled = max(steps) <= SETTLE_TOL * max(1.0, float(np.max(np.abs(flat))))
        if feasible and stat is not None and stop.stationarity_tol is not None and stat <= stop.stationarity_tol:
            status = "converged"
            break
        if (
            feasible
            and settled
            and stop.objective_rel_change_tol is not None
            and len(f_hist) == window + 1
            and abs(f_hist[0] - f) <= stop.objective_rel_change_tol * max(1.0, abs(f_hist[0]))
        ):
            status = "converged"
            break
        if feasible and stop.step_tol is not None and step <= stop.step_tol:
            status = "converged"
            break
        if stop.wall_clock_limit is not None and wall_ms / 1000.0 >= stop.wall_clock_limit:
            status = "budget"
            break

    trace.terminal_status = status
    logger.info(f"{name} finished: {status} after {last_r} iterations")
    return x, trace


def _per_block(surrogates, n):
    if isinstance(surrogates, (list, tuple)):
        if len(surrogates) != n:
            raise ValueError(f"Expected {n} surrogates, got {len(surrogates)}")
        return tuple(surrogates)
    return (surrogates,) * n


def _start(problem, x0):
    x = problem.start_point() if x0 is None else x0
    problem.check_point(x)
    if not problem.is_feasible(x, tol=1e-10):
        raise InfeasibleError(f"Start point is infeasible for {problem.name}")
    return x


def _window(rule, n):
    if rule is None:
        return 1
    return rule.period or n


def _block_advance(problem, rule, solve_block, trace, objective, gamma_schedule=None, pool=None):
    """Build advance(r, x) for single- or multi-block updates selected by `rule`."""

    def solve(i, z, r):
        try:
            return solve_block(i, z, r)
        except BudgetExceededError as e:
            trace.note(f"inner solver budget exhausted on block {i}; using its best iterate")
            return e.best

    def solve_many(indices, z, r):
        if pool is not None and len(indices) > 1:
            results = list(pool.map(lambda i: solve(i, z, r), indices))
        else:
            results = [solve(i, z, r) for i in indices]
        return dict(zip(indices, results))

    def advance(r, x):
        candidates = None
        if rule.needs_candidates:
            updates = solve_many(tuple(range(problem.n_blocks)), x, r)
            candidates = Candidates(
                updates=tuple(updates[i] for i in range(problem.n_blocks)),
                step_norms=tuple(float(np.linalg.norm(updates[i] - x[i])) for i in range(problem.n_blocks)),
                objectives=tuple(objective(x.replace_block(i, updates[i])) for i in range(problem.n_blocks)),
            )
        blocks = rule.select(r - 1, candidates)
        if candidates is not None:
            updates = {i: candidates.updates[i] for i in blocks}
        else:
            updates = solve_many(tuple(blocks), x, r)
        if gamma_schedule is not None:
            gamma = gamma_schedule(r)
            if gamma != 1.0:
                updates = {i: x[i] + gamma * (u - x[i]) for i, u in updates.items()}
        return blocks, x.replace_blocks(updates)

    return advance


def _stat_gap_fn(problem, record_gap):
    if callable(record_gap):
        return record_gap
    if record_gap:
        return lambda x: prox_residual(problem, x)
    return None


def _slice_update(problem, i, z):
    A = problem.coupling.matrices[i]
    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise UnsupportedOperationError(f"Coupling matrix of block {i} is rank deficient; the slice is not a point")
    rhs = problem.coupling.rhs - problem.coupling.product(z, skip=i)
    return np.linalg.lstsq(A, rhs, rcond=None)[0]


def run_bsum(
    problem,
    surrogates,
    rule,
    stop=None,
    x0=None,
    *,
    coupling="reject",
    record_gap=False,
    n_workers=1,
    keep_iterates=False,
):
    """Block successive upper bound minimization.

    At iteration r the rule picks I^r and every chosen block is replaced by a
    minimizer of its surrogate at the current iterate.

    Args:
        problem: Problem without coupling (or with coupling="slice")
        surrogates: one Surrogate, or one per block
        rule: SelectionRule
        stop: StopCriteria, defaults apply when None
        x0: feasible start, defaults to the projection of zeros
        coupling: "reject" raises for coupled problems; "slice" keeps each
            block on the affine slice fixed by the other blocks
        record_gap: True records the prox residual; a callable records its value
        n_workers: threads used when several blocks are updated together
        keep_iterates: store every iterate on the trace

    Returns:
        (BlockVector, Trace)
    """
    stop = StopCriteria() if stop is None else stop
    n = problem.n_blocks
    surrogates = _per_block(surrogates, n)
    if coupling not in ("reject", "slice"):
        raise ValueError("coupling must be 'reject' or 'slice'")
    if problem.coupling is not None and coupling == "reject":
        raise CouplingError(f"{problem.name} has coupling constraints; use run_bsumm")
    x0 = _start(problem, x0)
    feasibility = None
    if coupling == "slice":
        if problem.coupling is None:
            raise CouplingError("coupling='slice' needs a coupled problem")
        if problem.coupling.residual_norm(x0) > 1e-9:
            raise InfeasibleError("Start point violates the coupling constraint")
        feasibility = problem.coupling.residual_norm

        def solve_block(i, z, r):
            return _slice_update(problem, i, z)

    else:

        def solve_block(i, z, r):
            return minimize_block_surrogate(surrogates[i].at_iteration(r), problem, i, z)

    def objective(x):
        return eval_objective(problem, x)

    trace = Trace()
    rule.reset()
    pool = ThreadPoolExecutor(max_workers=n_workers) if n_workers > 1 else None
    try:
        advance = _block_advance(problem, rule, solve_block, trace, objective, pool=pool)
        return _drive(
            f"BSUM on {problem.name} ({rule.label})",
            x0,
            stop,
            advance,
            objective,
            _window(rule, n),
            trace=trace,
            gap=_stat_gap_fn(problem, record_gap),
            feasibility=feasibility,
            keep_iterates=keep_iterates,
        )
    finally:
        if pool is not None:
            pool.shutdown()


def run_psca(
    problem,
    surrogates,
    schedule=None,
    rule=None,
    stop=None,
    x0=None,
    *,
    record_gap=False,
    n_workers=1,
    keep_iterates=False,
):
    """Parallel successive convex approximation: candidates from the surrogates of
    the selected blocks, then x_i <- x_i + gamma^r (candidate - x_i)."""
    stop = StopCriteria() if stop is None else stop
    n = problem.n_blocks
    if problem.coupling is not None:
        raise CouplingError(f"{problem.name} has coupling constraints; use run_bsumm")
    surrogates = _per_block(surrogates, n)
    schedule = StepsizeSchedule.diminishing() if schedule is None else schedule
    rule = SelectionRule.all_blocks(n) if rule is None else rule
    x0 = _start(problem, x0)

    def gamma_schedule(r):
        gamma = schedule.value(r)
        if not 0 < gamma <= 1:
            raise ValueError(f"Stepsize {gamma:g} at r={r} is outside (0, 1]")
        return gamma

    def solve_block(i, z, r):
        return minimize_block_surrogate(surrogates[i].at_iteration(r), problem, i, z)

    def objective(x):
        return eval_objective(problem, x)

    trace = Trace()
    rule.reset()
    pool = ThreadPoolExecutor(max_workers=n_workers) if n_workers > 1 else None
    try:
        advance = _block_advance(problem, rule, solve_block, trace, objective, gamma_schedule, pool)
        return _drive(
            f"PSCA on {problem.name} ({rule.label})",
            x0,
            stop,
            advance,
            objective,
            _window(rule, n),
            trace=trace,
            gap=_stat_gap_fn(problem, record_gap),
            keep_iterates=keep_iterates,
        )
    finally:
        if pool is not None:
            pool.shutdown()


@define(frozen=True, eq=False)
class QuadraticModel:
    """q(x) = x'Hx/2 + lin'x + const, with H a scalar, a diagonal or a matrix."""

    hess: object
    lin: np.ndarray = field(converter=lambda v: np.asarray(v, dtype=float).reshape(-1))
    const: float = 0.0

    def value(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        H = np.asarray(self.hess)
        quad = H * (x @ x) if H.ndim == 0 else (x @ (H * x) if H.ndim == 1 else x @ H @ x)
        return float(0.5 * quad + self.lin @ x + self.const)

    def hess_matrix(self):
        H = np.asarray(self.hess, dtype=float)
        m = self.lin.size
        if H.ndim == 0:
            return float(H) * np.eye(m)
        return np.diag(H) if H.ndim == 1 else H

    @classmethod
    def lipschitz_bound(cls, value, grad, z, L):
        """g(z) + <grad, x - z> + L/2 |x - z|^2 written in absolute coordinates."""
        z = np.asarray(z, dtype=float).reshape(-1)
        grad = np.asarray(grad, dtype=float).reshape(-1)
        return cls(float(L), grad - L * z, float(value) - grad @ z + 0.5 * L * (z @ z))

    @classmethod
    def proximal(cls, base, z, gamma):
        """base(x) + gamma/2 |x - z|^2 for a quadratic base."""
        z = np.asarray(z, dtype=float).reshape(-1)
        H = np.asarray(base.hess, dtype=float)
        hess = H + gamma if H.ndim < 2 else H + gamma * np.eye(z.size)
        return cls(hess, base.lin - gamma * z, base.const + 0.5 * gamma * (z @ z))

    @classmethod
    def least_squares(cls, a, b):
        """(a'x - b)^2 exactly."""
        a = np.asarray(a, dtype=float).reshape(-1)
        return cls(2.0 * np.outer(a, a), -2.0 * b * a, float(b) ** 2)


class _Aggregate:
    """Running coefficient sums of quadratic models; memory does not grow with r."""

    def __init__(self, m):
        self.m = m
        self.hess = 0.0
        self.lin = np.zeros(m)
        self.const = 0.0
        self.count = 0

    def _promote(self, H, ndim):
        if H.ndim == ndim:
            return H
        if ndim == 1:
            return np.full(self.m, float(H))
        return np.diag(H) if H.ndim == 1 else float(H) * np.eye(self.m)

    def add(self, model):
        H = np.asarray(model.hess, dtype=float)
        current = np.asarray(self.hess, dtype=float)
        ndim = max(H.ndim, current.ndim)
        self.hess = self._promote(current, ndim) + self._promote(H, ndim)
        self.lin = self.lin + model.lin
        self.const += model.const
        self.count += 1

    def mean(self):
        return QuadraticModel(np.asarray(self.hess) / self.count, self.lin / self.count, self.const / self.count)


@define(frozen=True, eq=False)
class ProductSet:
    """X_1 x ... x X_n acting on the flattened variable."""

    sets: tuple
    kind: str = "product"

    @property
    def dims(self):
        return tuple(s.dimension for s in self.sets)

    @property
    def is_separable(self):
        return all(s.is_separable for s in self.sets)

    @property
    def is_unconstrained(self):
        return all(s.kind == "unconstrained" for s in self.sets)

    def project(self, v):
        cuts = np.cumsum(self.dims)[:-1]
        return np.concatenate([s.project(b) for s, b in zip(self.sets, np.split(np.asarray(v), cuts))])


@define(frozen=True, eq=False)
class StochasticStream:
    """Realizations xi ~ sampler(rng) and their per-draw quadratic upper bounds.

    `builder(xi, z)` returns the QuadraticModel of g(., xi) built at the flat
    iterate z; `loss(x, xi)` evaluates g(x, xi).
    """

    sampler: object
    builder: object
    loss: object
    family: str = "quadratic"
    seed: int = 0


def _minimize_aggregate(model, pset, budget_tol=1e-12, max_iters=100000):
    H = np.asarray(model.hess, dtype=float)
    if H.ndim == 0 or (H.ndim == 1 and pset.is_separable):
        if np.any(H <= 0):
            if pset.is_unconstrained:
                return np.linalg.lstsq(model.hess_matrix(), -model.lin, rcond=None)[0]
            raise UnsupportedOperationError("Aggregate curvature is not positive")
        return pset.project(-model.lin / H)
    if pset.is_unconstrained:
        return np.linalg.lstsq(model.hess_matrix(), -model.lin, rcond=None)[0]
    Hm = model.hess_matrix()
    L = max(float(np.linalg.eigvalsh(Hm).max()), 1e-12)
    return prox_gradient_loop(
        lambda v: Hm @ v + model.lin,
        L,
        pset.project(np.zeros(model.lin.size)),
        None,
        pset,
        InnerBudget(max_iters=max_iters, tol=budget_tol),
        value=lambda v: 0.5 * float(v @ Hm @ v) + float(model.lin @ v),
    )


def run_ssum(stream, sets, stop=None, x0=None, *, keep_iterates=False):
    """Stochastic successive upper bound minimization.

    Each iteration draws xi^r, adds its bound built at x^{r-1} to the running
    average and moves to the minimizer of that average. The recorded f is the
    running mean of g(x^{r-1}, xi^r).
    """
    if stream.family not in ("quadratic", "proximal"):
        raise UnsupportedOperationError(
            f"Surrogate family {stream.family!r} cannot be aggregated in constant memory"
        )
    stop = StopCriteria() if stop is None else stop
    sets = (sets,) if not isinstance(sets, (list, tuple)) else tuple(sets)
    pset = ProductSet(sets)
    dims = pset.dims
    x0 = BlockVector.zeros(dims) if x0 is None else x0
    x0 = BlockVector.from_flat(pset.project(x0.flatten()), dims)
    rng = np.random.default_rng(stream.seed)
    aggregate = _Aggregate(sum(dims))
    state = {"loss_sum": 0.0, "f": None}

    def advance(r, x):
        xi = stream.sampler(rng)
        z = x.flatten()
        state["loss_sum"] += float(stream.loss(z, xi))
        state["f"] = state["loss_sum"] / r
        aggregate.add(stream.builder(xi, z))
        x_new = _minimize_aggregate(aggregate.mean(), pset)
        return tuple(range(len(dims))), BlockVector.from_flat(x_new, dims)

    trace = Trace()
    x, trace = _drive(
        f"SSUM ({stream.family})",
        x0,
        stop,
        advance,
        lambda x: state["f"],
        1,
        trace=trace,
        keep_iterates=keep_iterates,
        detect_cycles=False,
        initial_f=None,
    )
    trace.extras["aggregate"] = aggregate.mean() if aggregate.count else None
    return x, trace


def _smooth_lipschitz(s, problem, i, z):
    if s.kind in ("exact", "proximal"):
        L = problem.block_lipschitz[i] if problem.block_lipschitz is not None else estimate_block_lipschitz(problem, i, z)
        return L * 1.01 + s.gamma
    if s.kind == "quadratic":
        kind, phi = resolve_phi(s, problem, i, z)
        if kind == "scalar":
            return phi
        return float(np.max(phi)) if kind == "diag" else float(np.linalg.eigvalsh(phi).max())
    if s.kind == "linear":
        return 0.0
    raise UnsupportedOperationError(f"{s.kind} surrogates are not supported by BSUMM")


def run_bsumm(
    problem,
    surrogates,
    rho=1.0,
    dual_schedule=None,
    rule=None,
    stop=None,
    x0=None,
    lam0=None,
    dual_every=None,
    *,
    record_gap=False,
    keep_iterates=False,
):
    """Block successive upper bound minimization method of multipliers.

    Primal block updates minimize the surrogate plus the exact augmented
    Lagrangian terms lam'(A_i x_i) + rho/2 |A_i x_i + c_i|^2; every
    `dual_every` iterations lam <- lam + alpha^r (sum A_i x_i - b).

    Returns:
        (BlockVector, dual vector, Trace)
    """
    if problem.coupling is None:
        raise CouplingError(f"{problem.name} has no coupling constraints; use run_bsum")
    if rho <= 0:
        raise ValueError("rho must be positive")
    stop = StopCriteria() if stop is None else stop
    n = problem.n_blocks
    surrogates = _per_block(surrogates, n)
    rule = SelectionRule.cyclic(n) if rule is None else rule
    dual_schedule = StepsizeSchedule.constant(rho) if dual_schedule is None else dual_schedule
    dual_every = n if dual_every is None else int(dual_every)
    coupling = problem.coupling
    x0 = _start(problem, x0)
    lam = np.zeros(coupling.rhs.size) if lam0 is None else np.asarray(lam0, dtype=float).reshape(-1).copy()
    trace = Trace()
    if not problem.convex:
        trace.note(f"{problem.name} is not marked convex; BSUMM convergence is only guaranteed for convex problems")

    def solve_block(i, z, r):
        s = surrogates[i].at_iteration(r)
        A = coupling.matrices[i]
        c = coupling.product(z, skip=i) - coupling.rhs

        def grad(v):
            return surrogate_gradient(s, problem, i, v, z) + A.T @ (lam + rho * (A @ v + c))

        def augmented(v):
            u = A @ v + c
            return surrogate_value(s, problem, i, v, z) + float(lam @ u) + 0.5 * rho * float(u @ u)

        L = _smooth_lipschitz(s, problem, i, z) + rho * np.linalg.norm(A, 2) ** 2
        return prox_gradient_loop(
            grad, max(L, 1e-12), z[i], problem.nonsmooth[i], problem.sets[i], s.budget, objective=augmented
        )

    def dual_step(r, x, trace):
        if r % dual_every == 0:
            lam[:] = lam + dual_schedule.value(r // dual_every) * coupling.residual(x)

    def objective(x):
        return eval_objective(problem, x)

    rule.reset()
    advance = _block_advance(problem, rule, solve_block, trace, objective)
    x, trace = _drive(
        f"BSUMM on {problem.name} (rho={rho:g})",
        x0,
        stop,
        advance,
        objective,
        _window(rule, n),
        trace=trace,
        gap=_stat_gap_fn(problem, record_gap),
        feasibility=coupling.residual_norm,
        after_iteration=dual_step,
        keep_iterates=keep_iterates,
    )
    trace.extras["dual"] = lam.copy()
    return x, lam.copy(), trace
