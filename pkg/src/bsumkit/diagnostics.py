import logging
import math
from typing import Optional

import numpy as np
from attrs import define

from .core import BlockVector, directional_derivative, eval_objective, prox_residual
from .engine import Trace
from .errors import BudgetExceededError, InfeasibleError, UnsupportedOperationError
from .surrogates import Surrogate, minimize_block_surrogate

# Set a basic logging level
logging.basicConfig(level=logging.INFO)

# Logging for this package
logger = logging.getLogger(__name__)

# Set logging level for this package
logger.setLevel(logging.DEBUG)

DIRECTION_DELTA = 1e-3
STALL_DECREASE = 1e-3


@define(frozen=True)
class GapReport:
    full_gap: float
    coordinatewise_gap: float
    full_method: str
    coordinatewise_method: str


@define(frozen=True)
class DescentCheck:
    passed: bool
    first_violation: Optional[int] = None
    max_increase: float = 0.0


@define(frozen=True)
class RateEstimate:
    exponent: float
    classification: str
    n_used: int
    note: str = ""


def _feasible_direction(problem, x, w):
    base = x.flatten()
    trial = problem.project(BlockVector.from_flat(np.real(base) + DIRECTION_DELTA * w, x.dims)).flatten()
    d = np.real(trial - base) / DIRECTION_DELTA
    norm = np.linalg.norm(d)
    return d / norm if norm > 1e-12 else None


def _safe_derivative(problem, x, d):
    try:
        return directional_derivative(problem, x, d)
    except InfeasibleError:
        return None


def _sampled_min_derivative(problem, x, n_dirs, seed, directions):
    """Smallest directional derivative over seeded feasible directions, refined
    by a pattern search around the best one."""
    rng = np.random.default_rng(seed)
    m = x.size
    best_val, best_dir = np.inf, None
    for _ in range(n_dirs):
        d = _feasible_direction(problem, x, rng.standard_normal(m))
        if d is None:
            continue
        val = _safe_derivative(problem, x, d)
        if val is not None and val < best_val:
            best_val, best_dir = val, d
    if best_dir is not None:
        step = 0.25
        while step > 1e-4:
            improved = False
            for j in range(m):
                for sign in (1.0, -1.0):
                    trial = best_dir.copy()
                    trial[j] += sign * step
                    d = _feasible_direction(problem, x, trial)
                    if d is None:
                        continue
                    val = _safe_derivative(problem, x, d)
                    if val is not None and val < best_val:
                        best_val, best_dir, improved = val, d, True
            if not improved:
                step /= 2
    for d in directions or ():
        d = np.asarray(d.flatten() if isinstance(d, BlockVector) else d, dtype=float).reshape(-1)
        d = d / np.linalg.norm(d)
        val = _safe_derivative(problem, x, d)
        if val is not None:
            best_val = min(best_val, val)
    return best_val


def stationarity_gap(problem, x, n_dirs=256, seed=0, directions=None):
    """How far x is from being stationary, and from being a coordinatewise minimum.

    The full gap is the prox residual on composite-smooth problems. Otherwise
    it is minus the smallest sampled directional derivative; that estimate can
    only certify NON-stationarity, a zero gap proves nothing.

    The coordinatewise gap is max_i f(x) - f(x_i^+, x_-i) with x_i^+ a
    proximal (gamma = 1) block solve.
    """
    pr = prox_residual(problem, x)
    if pr is not None:
        full_gap, full_method = pr, "prox_residual"
    else:
        min_dd = _sampled_min_derivative(problem, x, n_dirs, seed, directions)
        full_gap = -min(0.0, min_dd) if np.isfinite(min_dd) else 0.0
        full_method = "sampled_directions"

    f_x = eval_objective(problem, x)
    prox = Surrogate.proximal(1.0)
    coord_gap, coord_method = 0.0, "proximal_block_solve"
    for i in range(problem.n_blocks):
        try:
            x_i = minimize_block_surrogate(prox, problem, i, x)
        except BudgetExceededError as e:
            x_i = e.best
        except UnsupportedOperationError:
            coord_gap, coord_method = math.nan, "unavailable"
            break
        coord_gap = max(coord_gap, f_x - eval_objective(problem, x.replace_block(i, x_i)))
    return GapReport(float(full_gap), float(coord_gap), full_method, coord_method)


def _values(trace_or_seq, with_initial=True):
    if isinstance(trace_or_seq, Trace):
        values = list(trace_or_seq.objective_values)
        if with_initial and trace_or_seq.initial_f is not None:
            values = [trace_or_seq.initial_f] + values
        return np.asarray(values, dtype=float)
    return np.asarray(trace_or_seq, dtype=float).reshape(-1)


def verify_monotone_descent(trace_or_seq, slack=1e-12):
    """Pass iff f_{k+1} <= f_k + slack throughout. For a Trace the starting
    objective is included, so the reported index is the record's r."""
    values = _values(trace_or_seq)
    if values.size == 0:
        raise ValueError("Cannot check descent on an empty trace")
    increases = np.diff(values)
    bad = np.nonzero(increases > slack)[0]
    max_increase = float(increases.max()) if increases.size else 0.0
    if bad.size:
        return DescentCheck(False, int(bad[0]) + 1, max_increase)
    return DescentCheck(True, None, max_increase)


def _ssr(x, y):
    coef = np.polyfit(x, y, 1)
    return coef, float(np.sum((y - np.polyval(coef, x)) ** 2))


def estimate_rate_exponent(trace_or_values, f_star, tail_fraction=0.5, floor=0.0):
    """Fit log(f_r - f*) against log r over the tail of a run.

    The run is classed linear when log(f_r - f*) against r fits better,
    stalled when the tail barely decreases, sublinear otherwise. Records with
    f_r - f* <= floor end the usable part of the run.
    """
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must lie in (0, 1]")
    values = _values(trace_or_values, with_initial=False)
    if isinstance(trace_or_values, Trace):
        rs = np.array([rec.r for rec in trace_or_values.records], dtype=float)
    else:
        rs = np.arange(1, values.size + 1, dtype=float)
    gaps = values - f_star
    note = ""
    cut = np.nonzero(gaps <= floor)[0]
    if cut.size:
        note = f"truncated at r={int(rs[cut[0]])}: f - f* <= {floor:g}"
        logger.warning(note)
        rs, gaps = rs[: cut[0]], gaps[: cut[0]]
    n_tail = int(math.ceil(tail_fraction * gaps.size))
    if n_tail < 3:
        raise ValueError("Not enough records above f* to fit a rate")
    rs, gaps = rs[-n_tail:], gaps[-n_tail:]
    logs = np.log(gaps)
    coef, loglog_ssr = _ssr(np.log(rs), logs)
    _, loglin_ssr = _ssr(rs, logs)
    if gaps[-1] >= (1.0 - STALL_DECREASE) * gaps[0]:
        classification = "stalled"
    elif loglin_ssr < loglog_ssr:
        classification = "linear"
    else:
        classification = "sublinear"
    return RateEstimate(float(coef[0]), classification, int(n_tail), note)
