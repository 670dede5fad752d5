import logging
from typing import Any, Callable, Optional

import numpy as np
import pandas as pd
from attrs import define, evolve, field

from .core import eval_block_gradient, eval_objective, ladder_derivative
from .errors import (
    BudgetExceededError,
    UnboundedSubproblemError,
    UnsupportedOperationError,
)

# Set a basic logging level
logging.basicConfig(level=logging.INFO)

# Logging for this package
logger = logging.getLogger(__name__)

# Set logging level for this package
logger.setLevel(logging.DEBUG)

SURROGATE_KINDS = ("exact", "proximal", "quadratic", "linear", "jensen", "custom")
IMPLIED_A3_KINDS = ("quadratic", "linear", "jensen")
A1_TOL = 1e-10
A3_TOL = 1e-4
A3_DELTA = 1e-3


@define(frozen=True)
class InnerBudget:
    max_iters: int = 10000
    tol: float = 1e-8


def _check_phi(phi):
    if phi is None or callable(phi):
        return phi
    arr = np.asarray(phi, dtype=float)
    if arr.ndim == 0:
        if arr <= 0:
            raise ValueError("Quadratic surrogate scalar must be positive")
        return float(arr)
    if arr.ndim == 1:
        if np.any(arr <= 0):
            raise ValueError("Quadratic surrogate diagonal must be positive")
        return arr
    if not np.allclose(arr, arr.T):
        raise ValueError("Quadratic surrogate matrix must be symmetric")
    if np.linalg.eigvalsh(arr).min() <= 0:
        raise ValueError("Quadratic surrogate matrix must be positive definite")
    return arr


def _check_weights(weights):
    if weights is None or isinstance(weights, str):
        if weights not in (None, "proportional"):
            raise ValueError(f"Unknown Jensen weights {weights!r}")
        return weights
    checked = []
    for i, w in enumerate(weights):
        w = np.asarray(w, dtype=float).reshape(-1)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"Jensen weights of block {i} must be nonnegative and sum to 1")
        checked.append(w)
    return tuple(checked)


@define(frozen=True, eq=False)
class Surrogate:
    """A per-block upper bound u_i(., z) of the objective and how to minimize it.

    Build one with the constructors rather than directly:
    `exact`, `proximal`, `quadratic`, `linear`, `jensen` and `custom`.
    """

    kind: str
    gamma: float = 0.0
    diminishing: bool = False
    phi: Any = field(default=None, converter=_check_phi)
    safety: float = 1.01
    weights: Any = field(default=None, converter=_check_weights)
    value_fn: Optional[Callable] = None
    minimizer_fn: Optional[Callable] = None
    budget: InnerBudget = InnerBudget()
    name: str = ""

    def __attrs_post_init__(self):
        if self.kind not in SURROGATE_KINDS:
            raise ValueError(f"Unknown surrogate kind {self.kind!r}; valid kinds: {', '.join(SURROGATE_KINDS)}")
        if self.kind == "proximal" and not self.gamma > 0:
            raise ValueError("Proximal surrogate needs gamma > 0")
        if self.kind == "custom" and (self.value_fn is None or self.minimizer_fn is None):
            raise ValueError("Custom surrogate needs both a value and a minimizer")
        if self.safety < 1.0:
            raise ValueError("Safety factor must be at least 1")

    @classmethod
    def exact(cls, budget=InnerBudget()):
        return cls("exact", budget=budget, name="exact")

    @classmethod
    def proximal(cls, gamma=1.0, diminishing=False, budget=InnerBudget()):
        label = f"proximal(gamma={gamma:g}{', diminishing' if diminishing else ''})"
        return cls("proximal", gamma=float(gamma), diminishing=diminishing, budget=budget, name=label)

    @classmethod
    def quadratic(cls, phi=None, beta=None, safety=1.01, budget=InnerBudget()):
        """Quadratic upper bound; `beta` is shorthand for phi = I / beta."""
        if beta is not None:
            if phi is not None:
                raise ValueError("Give either phi or beta, not both")
            if beta <= 0:
                raise ValueError("beta must be positive")
            phi = 1.0 / beta
        return cls("quadratic", phi=phi, safety=safety, budget=budget, name="quadratic")

    @classmethod
    def linear(cls):
        return cls("linear", name="linear")

    @classmethod
    def jensen(cls, weights=None, budget=InnerBudget()):
        return cls("jensen", weights=weights, budget=budget, name="jensen")

    @classmethod
    def custom(cls, value, minimizer, name="custom"):
        """Caller-supplied majorizer: value(i, x_i, z) and its minimizer(i, z)."""
        return cls("custom", value_fn=value, minimizer_fn=minimizer, name=name)

    def at_iteration(self, r):
        if not self.diminishing:
            return self
        return evolve(self, gamma=self.gamma / (r + 1), diminishing=False)


def _need_gradient(problem, kind):
    if problem.smooth_grad is None or problem.smooth is None:
        raise UnsupportedOperationError(f"{kind} surrogate needs a smooth part with a gradient on {problem.name}")


def _h_terms(problem, i, x_i, z):
    total = 0.0
    for j, h in enumerate(problem.nonsmooth):
        if h is not None:
            total += h(x_i if j == i else z[j])
    return total


def _real_dot(a, b):
    return float(np.real(np.vdot(a, b)))


def estimate_block_lipschitz(problem, i, z, n_iter=30, seed=0, eps=1e-6):
    """Largest block-Hessian eigenvalue at z by power iteration on finite-difference
    Hessian-vector products."""
    _need_gradient(problem, "quadratic")
    rng = np.random.default_rng(seed)
    m = problem.dims[i]
    v = rng.standard_normal(m)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(n_iter):
        plus = z.replace_block(i, z[i] + eps * v)
        minus = z.replace_block(i, z[i] - eps * v)
        hv = (eval_block_gradient(problem, i, plus) - eval_block_gradient(problem, i, minus)) / (2 * eps)
        norm = np.linalg.norm(hv)
        if norm == 0:
            break
        estimate = norm
        v = hv / norm
    return max(float(estimate), 1e-12)


def resolve_phi(s, problem, i, z):
    """Return ("scalar" | "diag" | "matrix", Phi_i) for a quadratic surrogate at z."""
    phi = s.phi
    if callable(phi):
        phi = _check_phi(phi(i, z))
    if phi is None:
        if problem.block_lipschitz is not None:
            L = problem.block_lipschitz[i]
        else:
            L = estimate_block_lipschitz(problem, i, z)
        return "scalar", max(L, 1e-12) * s.safety
    if np.ndim(phi) == 0:
        return "scalar", float(phi)
    phi = np.asarray(phi)
    m = problem.dims[i]
    if phi.shape not in ((m,), (m, m)):
        raise ValueError(f"Quadratic surrogate for block {i} has shape {phi.shape}, block size is {m}")
    return ("diag", phi) if phi.ndim == 1 else ("matrix", phi)


def _quad_form(kind, phi, d):
    if kind == "scalar":
        return 0.5 * phi * _real_dot(d, d)
    if kind == "diag":
        return 0.5 * float(np.sum(phi * np.abs(d) ** 2))
    return 0.5 * _real_dot(d, phi @ d)


def _jensen_weights(s, problem, i, z):
    a = problem.jensen.coefficients[i]
    if isinstance(s.weights, tuple):
        return s.weights[i]
    if s.weights == "proportional":
        w = np.abs(a) * np.abs(z[i])
        if w.sum() > 0:
            return w / w.sum()
    w = np.abs(a)
    return w / w.sum()


def _jensen_args(problem, i, x_i, z, w):
    a = problem.jensen.coefficients[i]
    t = problem.jensen.inner(z)
    active = w > 0
    args = t[i] + a[active] / w[active] * (x_i[active] - z[i][active])
    return t, active, args


def _jensen_smooth(problem, i, x_i, z, w):
    a = problem.jensen.coefficients[i]
    moved = (w == 0) & (a != 0) & (x_i != z[i])
    if np.any(moved):
        return np.inf
    t, active, args = _jensen_args(problem, i, x_i, z, w)
    total = 0.0
    for wj, arg in zip(w[active], args):
        tt = t.copy()
        tt[i] = arg
        total += wj * float(problem.jensen.outer(tt))
    return total


def _jensen_grad(problem, i, x_i, z, w):
    if problem.jensen.outer_grad is None:
        raise UnsupportedOperationError("Jensen surrogate minimization needs the outer gradient")
    a = problem.jensen.coefficients[i]
    t, active, args = _jensen_args(problem, i, x_i, z, w)
    grad = np.zeros_like(x_i, dtype=float)
    for idx, arg in zip(np.nonzero(active)[0], args):
        tt = t.copy()
        tt[i] = arg
        grad[idx] = a[idx] * float(np.asarray(problem.jensen.outer_grad(tt))[i])
    return grad


def surrogate_value(s, problem, i, x_i, z):
    """u_i(x_i, z) for the surrogate family of `s`, including the nonsmooth terms."""
    x_i = np.asarray(x_i).reshape(-1)
    s = s.at_iteration(0) if s.diminishing else s
    if s.kind == "exact":
        return eval_objective(problem, z.replace_block(i, x_i))
    if s.kind == "proximal":
        d = x_i - z[i]
        return eval_objective(problem, z.replace_block(i, x_i)) + 0.5 * s.gamma * _real_dot(d, d)
    if s.kind == "custom":
        return float(s.value_fn(i, x_i, z))
    if s.kind == "jensen":
        if problem.jensen is None:
            raise UnsupportedOperationError(f"{problem.name} carries no Jensen structure")
        w = _jensen_weights(s, problem, i, z)
        return _jensen_smooth(problem, i, x_i, z, w) + _h_terms(problem, i, x_i, z)
    _need_gradient(problem, s.kind)
    g0 = float(problem.smooth(z))
    grad = eval_block_gradient(problem, i, z)
    d = x_i - z[i]
    value = g0 + _real_dot(grad, d)
    if s.kind == "quadratic":
        kind, phi = resolve_phi(s, problem, i, z)
        value += _quad_form(kind, phi, d)
    return value + _h_terms(problem, i, x_i, z)


def surrogate_gradient(s, problem, i, x_i, z):
    """Gradient in x_i of the smooth part of u_i(., z)."""
    x_i = np.asarray(x_i).reshape(-1)
    if s.kind in ("exact", "proximal"):
        _need_gradient(problem, s.kind)
        grad = eval_block_gradient(problem, i, z.replace_block(i, x_i))
        return grad + s.gamma * (x_i - z[i]) if s.kind == "proximal" else grad
    if s.kind == "quadratic":
        _need_gradient(problem, s.kind)
        kind, phi = resolve_phi(s, problem, i, z)
        d = x_i - z[i]
        curvature = phi * d if kind != "matrix" else phi @ d
        return eval_block_gradient(problem, i, z) + curvature
    if s.kind == "linear":
        _need_gradient(problem, s.kind)
        return eval_block_gradient(problem, i, z)
    if s.kind == "jensen":
        return _jensen_grad(problem, i, x_i, z, _jensen_weights(s, problem, i, z))
    raise UnsupportedOperationError("Custom surrogates expose no gradient")


def prox_project(h, fset, v, t):
    """argmin_y h(y) + |y - v|^2 / (2t) over the set, where this is exact in closed form."""
    if h is None:
        return fset.project(v)
    if h.prox is None:
        raise UnsupportedOperationError(f"{h.name} has no proximal map")
    if fset.kind == "unconstrained":
        return h.prox(v, t)
    if fset.is_separable and h.weight is not None:
        return fset.project(h.prox(v, t))
    raise UnsupportedOperationError(f"No exact prox of {h.name} over a {fset.kind} set")


def prox_gradient_loop(grad, L, x0, h, fset, budget, value=None, objective=None):
    """Projected/proximal gradient iterations x <- prox(x - grad(x)/L).

    With L=None the step is found by backtracking on `value`. Stops when the
    gradient-mapping norm L|x+ - x| drops below budget.tol.

    On budget exhaustion the error carries the iterate (x0 included) with the
    lowest `objective`, which defaults to `value` plus h. With neither given
    the iterate with the smallest gradient mapping is kept.
    """
    x = np.asarray(x0).copy()
    backtrack = L is None
    if backtrack:
        if value is None:
            raise ValueError("Backtracking needs the smooth value")
        L = 1.0
    if objective is None and value is not None:
        def objective(v):
            return value(v) + (h(v) if h is not None else 0.0)
    best = x.copy()
    best_score = objective(x) if objective is not None else np.inf
    for k in range(budget.max_iters):
        g = grad(x)
        while True:
            x_new = prox_project(h, fset, x - g / L, 1.0 / L)
            if not backtrack:
                break
            d = x_new - x
            if value(x_new) <= value(x) + _real_dot(g, d) + 0.5 * L * _real_dot(d, d) + 1e-15:
                break
            L *= 2.0
        gap = L * float(np.linalg.norm(x_new - x))
        x = x_new
        if gap <= budget.tol:
            return x
        score = objective(x) if objective is not None else gap
        if np.isfinite(score) and score < best_score:
            best, best_score = x.copy(), score
    raise BudgetExceededError(
        f"Inner solver did not reach tolerance {budget.tol:g} in {budget.max_iters} iterations",
        best=best,
        iterations=budget.max_iters,
    )


def _minimize_linear(problem, i, z):
    if problem.nonsmooth[i] is not None:
        raise UnsupportedOperationError("Linear surrogate with a nonsmooth block term is not supported")
    g = np.real(eval_block_gradient(problem, i, z))
    fset = problem.sets[i]
    zi = np.real(z[i])
    if fset.kind in ("box", "unconstrained", "nonneg"):
        lo = fset.lo if fset.kind == "box" else np.full(zi.size, 0.0 if fset.kind == "nonneg" else -np.inf)
        hi = fset.hi if fset.kind == "box" else np.full(zi.size, np.inf)
        x = np.where(g > 0, lo, np.where(g < 0, hi, zi))
        if not np.all(np.isfinite(x)):
            raise UnboundedSubproblemError(f"Linear surrogate of block {i} is unbounded below over its set")
        return x
    if fset.kind == "ball":
        norm = np.linalg.norm(g)
        return zi.copy() if norm == 0 else -fset.radius * g / norm
    j = int(np.argmin(g))
    if float(g @ zi) <= g[j] + 1e-15:
        return zi.copy()
    vertex = np.zeros(zi.size)
    vertex[j] = 1.0
    return vertex


def minimize_block_surrogate(s, problem, i, z):
    """x_i^+ in argmin over X_i of u_i(., z) (which carries h_i where the family needs it)."""
    s = s.at_iteration(0) if s.diminishing else s
    fset = problem.sets[i]
    h = problem.nonsmooth[i]
    if s.kind == "custom":
        return fset.project(s.minimizer_fn(i, z))
    if s.kind in ("exact", "proximal"):
        if problem.block_minimizer is not None:
            return fset.project(problem.block_minimizer(i, z, s.gamma))
        _need_gradient(problem, s.kind)
        L = problem.block_lipschitz[i] if problem.block_lipschitz is not None else estimate_block_lipschitz(problem, i, z)
        return prox_gradient_loop(
            lambda v: surrogate_gradient(s, problem, i, v, z),
            L * 1.01 + s.gamma,
            z[i],
            h,
            fset,
            s.budget,
            objective=lambda v: surrogate_value(s, problem, i, v, z),
        )
    if s.kind == "linear":
        return _minimize_linear(problem, i, z)
    if s.kind == "jensen":
        if problem.jensen is None:
            raise UnsupportedOperationError(f"{problem.name} carries no Jensen structure")
        w = _jensen_weights(s, problem, i, z)
        x = prox_gradient_loop(
            lambda v: _jensen_grad(problem, i, v, z, w),
            None,
            z[i],
            h,
            fset,
            s.budget,
            value=lambda v: _jensen_smooth(problem, i, v, z, w),
        )
        pinned = w == 0
        x[pinned] = z[i][pinned]
        return x

    _need_gradient(problem, s.kind)
    kind, phi = resolve_phi(s, problem, i, z)
    grad = eval_block_gradient(problem, i, z)
    separable_h = h is None or h.weight is not None
    if kind == "scalar" and (h is None or fset.kind == "unconstrained" or (fset.is_separable and separable_h)):
        return prox_project(h, fset, z[i] - grad / phi, 1.0 / phi)
    if kind == "diag" and separable_h and fset.is_separable:
        return prox_project(h, fset, z[i] - grad / phi, 1.0 / phi)
    if kind == "matrix" and h is None and fset.kind == "unconstrained":
        return z[i] - np.linalg.solve(phi, grad)
    L = phi if kind == "scalar" else float(np.max(phi) if kind == "diag" else np.linalg.eigvalsh(phi).max())
    return prox_gradient_loop(
        lambda v: surrogate_gradient(s, problem, i, v, z),
        L,
        z[i],
        h,
        fset,
        s.budget,
        objective=lambda v: surrogate_value(s, problem, i, v, z),
    )


@define(frozen=True)
class ValidationReport:
    a1_max_abs_gap: float
    a2_min_slack: float
    a3_max_deriv_gap: Optional[float]
    verdict: dict
    sample_count: int

    @property
    def passed(self):
        return all(v != "fail" for v in self.verdict.values())

    def to_frame(self):
        values = {"A1": self.a1_max_abs_gap, "A2": self.a2_min_slack, "A3": self.a3_max_deriv_gap}
        return pd.DataFrame(
            [{"assumption": k, "value": values[k], "verdict": self.verdict[k]} for k in ("A1", "A2", "A3")]
        )


def validate_assumption_a(s, problem, z, n_samples=1000, seed=0, tol=1e-9, scale=1.0, extra_points=None):
    """Sample-based check of tightness (A1), upper bound (A2) and first-order agreement (A3).

    Violations are reported, not raised. A3 is reported as implied when the
    surrogate approximates only the smooth part of a composite objective.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    extra_points = extra_points or {}
    f_z = eval_objective(problem, z)
    a1 = 0.0
    a2 = np.inf
    a3 = 0.0
    count = 0
    implied = s.kind in IMPLIED_A3_KINDS and problem.objective is None
    for i in range(problem.n_blocks):
        fset = problem.sets[i]
        a1 = max(a1, abs(surrogate_value(s, problem, i, z[i], z) - f_z))
        points = list(fset.sample(rng, n_samples, center=z[i], scale=scale))
        points += [np.asarray(p, dtype=float).reshape(-1) for p in extra_points.get(i, ())]
        for x_i in points:
            f_x = eval_objective(problem, z.replace_block(i, x_i))
            a2 = min(a2, surrogate_value(s, problem, i, x_i, z) - f_x)
            count += 1
        if implied:
            continue
        for _ in range(min(n_samples, 16)):
            w = rng.standard_normal(problem.dims[i])
            d = (fset.project(z[i] + A3_DELTA * w) - z[i]) / A3_DELTA
            if np.linalg.norm(d) < 1e-12:
                continue
            feasible = fset.contains
            du = ladder_derivative(lambda v: surrogate_value(s, problem, i, v, z), np.real(z[i]), d, feasible)
            df = ladder_derivative(
                lambda v: eval_objective(problem, z.replace_block(i, v)), np.real(z[i]), d, feasible
            )
            a3 = max(a3, abs(du - df) / max(1.0, abs(df)))
    verdict = {
        "A1": "pass" if a1 <= A1_TOL * max(1.0, abs(f_z)) else "fail",
        "A2": "pass" if a2 >= -tol else "fail",
        "A3": "implied" if implied else ("pass" if a3 <= A3_TOL else "fail"),
    }
    report = ValidationReport(float(a1), float(a2), None if implied else float(a3), verdict, count)
    logger.debug(f"Validated {s.name} on {problem.name}: {verdict}")
    return report
