"""Desk-scale reproductions of the pathological examples, the solver
experiments and the extension drivers. Each scenario returns a table of
checks and the traces it produced."""

import logging

import numpy as np
from pandas import DataFrame

from .core import FeasibleSet, Problem, build_pathology, soft_threshold
from .diagnostics import estimate_rate_exponent, stationarity_gap, verify_monotone_descent
from .engine import (
    QuadraticModel,
    StepsizeSchedule,
    StochasticStream,
    StopCriteria,
    run_bsum,
    run_bsumm,
    run_psca,
    run_ssum,
)
from .selection import SelectionRule
from .solvers import cp_decompose, cp_full, lasso_bcpg, make_lasso_problem, wmmse_design
from .surrogates import Surrogate

# Set a basic logging level
logging.basicConfig(level=logging.INFO)

# Logging for this package
logger = logging.getLogger(__name__)

# Set logging level for this package
logger.setLevel(logging.DEBUG)

POWELL_PATTERNS = np.array(
    [(1, 1, -1), (1, -1, -1), (1, -1, 1), (-1, -1, 1), (-1, 1, 1), (-1, 1, -1)], dtype=float
)


class Checks:
    def __init__(self, scenario):
        self.scenario = scenario
        self.rows = []
        self.traces = {}

    def add(self, check, value, passed):
        self.rows.append({"scenario": self.scenario, "check": check, "value": float(value), "pass": bool(passed)})

    def keep(self, label, trace):
        self.traces[f"{self.scenario}_{label}"] = trace

    def frame(self):
        return DataFrame(self.rows, columns=["scenario", "check", "value", "pass"])


def _no_tolerances(max_iters):
    return StopCriteria(max_iters=max_iters, objective_rel_change_tol=None, stationarity_tol=None)


def powell_cycle_visits(points):
    """Which of the six sign patterns each cycle point lies within 0.1 of."""
    visited = set()
    for p in points:
        dist = np.abs(POWELL_PATTERNS - np.asarray(p)).max(axis=1)
        hit = np.nonzero(dist < 0.1)[0]
        if hit.size:
            visited.add(int(hit[0]))
    return visited


def pathologies(seed=0, n_seeds=50):
    checks = Checks("pathologies")

    fx = build_pathology("ex2_l1_nonregular")
    report = stationarity_gap(fx.problem, fx.start, seed=seed, directions=[np.array([4.0, -3.0]) / 5.0])
    checks.add("ex2 coordinatewise gap <= 1e-8", report.coordinatewise_gap, report.coordinatewise_gap <= 1e-8)
    checks.add("ex2 full gap >= 0.9", report.full_gap, report.full_gap >= 0.9)
    x, trace = run_bsum(fx.problem, Surrogate.exact(), SelectionRule.cyclic(2), _no_tolerances(100), fx.start)
    moved = float(np.abs(x.flatten() - fx.start.flatten()).max())
    checks.add("ex2 exact BCD makes no progress", moved, moved == 0.0 and trace.final_f == 5.0)
    checks.keep("ex2_exact", trace)

    fx = build_pathology("ex4_coupling")
    x, trace = run_bsum(
        fx.problem, Surrogate.exact(), SelectionRule.cyclic(2), _no_tolerances(100), fx.start, coupling="slice"
    )
    checks.add("ex4 BSUM stuck at (0, 2)", trace.final_f, np.array_equal(x.flatten(), [0.0, 2.0]) and trace.final_f == 4.0)
    checks.keep("ex4_slice", trace)

    fx = build_pathology("ex5_linear_bound")
    _, trace = run_bsum(
        fx.problem, Surrogate.linear(), SelectionRule.cyclic(2), _no_tolerances(100), fx.start, keep_iterates=True
    )
    corners = all(np.all(np.abs(np.abs(it.flatten()) - 1.0) == 0.0) for it in trace.iterates)
    closest = min(float(np.linalg.norm(it.flatten())) for it in trace.iterates)
    checks.add("ex5 linear iterates stay on corners", closest, corners and closest >= 0.5)
    checks.keep("ex5_linear", trace)
    _, trace = run_psca(fx.problem, Surrogate.linear(), StepsizeSchedule.constant(1.0), stop=_no_tolerances(100), x0=fx.start)
    period = trace.cycle.period if trace.cycle is not None else 0
    checks.add("ex5 simultaneous linear updates oscillate", period, trace.terminal_status == "detected_cycle" and period == 2)
    _, trace = run_bsum(fx.problem, Surrogate.proximal(1.0), SelectionRule.cyclic(2), StopCriteria(), fx.start)
    checks.add("ex5 proximal reaches f <= 1e-8", trace.final_f, trace.final_f <= 1e-8)
    checks.keep("ex5_proximal", trace)

    fx = build_pathology("ex6_powell")
    _, trace = run_bsum(fx.problem, Surrogate.exact(), SelectionRule.cyclic(3), StopCriteria(), fx.start)
    visited = powell_cycle_visits(trace.cycle.points) if trace.cycle is not None else set()
    checks.add(
        "ex6 exact cyclic BSUM cycles through six patterns",
        len(visited),
        trace.terminal_status == "detected_cycle" and len(visited) == 6,
    )
    checks.keep("ex6_exact", trace)

    boxed = build_pathology("ex6_powell", bound=2.0)
    stop = StopCriteria(max_iters=1000, objective_rel_change_tol=None, stationarity_tol=1e-7)
    x, trace = run_bsum(boxed.problem, Surrogate.proximal(1.0), SelectionRule.cyclic(3), stop, boxed.start, record_gap=True)
    gap = stationarity_gap(boxed.problem, x).full_gap
    checks.add("ex6 proximal BSUM gap <= 1e-6", gap, gap <= 1e-6)
    checks.keep("ex6_proximal", trace)

    rescued = 0
    for s in range(n_seeds):
        rule = SelectionRule.randomized(3, seed=seed + s)
        x, _ = run_bsum(boxed.problem, Surrogate.exact(), rule, StopCriteria(max_iters=10000), boxed.start)
        rescued += stationarity_gap(boxed.problem, x).full_gap <= 1e-4
    needed = int(np.ceil(0.9 * n_seeds))
    checks.add(f"ex6 randomized rule rescues >= {needed}/{n_seeds}", rescued, rescued >= needed)
    return checks


def swamp_tensor(rng, shape=(30, 30, 30), R=5, congruence=0.9):
    """Tensor from factors with highly collinear columns, the setting where ALS swamps."""
    factors = []
    for n in shape:
        common = rng.standard_normal((n, 1))
        factors.append(congruence * common + np.sqrt(1 - congruence**2) * rng.standard_normal((n, R)))
    return cp_full(*factors)


def cp_swamp(seed=0, n_seeds=20, shape=(30, 30, 30), R=5, sweeps=500):
    checks = Checks("cp_swamp")
    fits = {mode: [] for mode in ("plain_als", "proximal_als", "diminishing_proximal")}
    stop = StopCriteria(max_iters=3 * sweeps)
    for s in range(n_seeds):
        rng = np.random.default_rng(seed + s)
        X = swamp_tensor(rng, shape, R)
        init = tuple(rng.standard_normal((n, R)) for n in shape)
        for mode in fits:
            factors, trace = cp_decompose(X, R, mode=mode, stop=stop, init=init)
            fits[mode].append(factors.fit)
            checks.add(f"seed {seed + s} {mode} fit", factors.fit, verify_monotone_descent(trace, 1e-9).passed)
            if s == 0:
                checks.keep(mode, trace)
    medians = {mode: float(np.median(v)) for mode, v in fits.items()}
    checks.add("median fit proximal >= plain", medians["proximal_als"], medians["proximal_als"] >= medians["plain_als"] - 1e-3)
    checks.add(
        "median fit diminishing >= plain",
        medians["diminishing_proximal"],
        medians["diminishing_proximal"] >= medians["plain_als"] - 1e-3,
    )
    return checks


def lasso_reference(A, b, lam, iters=20000):
    """Objective value from a long accelerated proximal gradient run."""
    L = np.linalg.norm(A, 2) ** 2
    x = np.zeros(A.shape[1])
    y, t = x.copy(), 1.0
    for _ in range(iters):
        x_new = soft_threshold(y - A.T @ (A @ y - b) / L, lam / L)
        t_new = (1 + np.sqrt(1 + 4 * t * t)) / 2
        y = x_new + (t - 1) / t_new * (x_new - x)
        if (y - x_new) @ (x_new - x) > 0:
            y, t_new = x_new.copy(), 1.0
        x, t = x_new, t_new
    r = A @ x - b
    return 0.5 * float(r @ r) + lam * float(np.abs(x).sum())


def lasso_instance(seed=0, rows=200, cols=1000, sparsity=20, lam_ratio=0.1):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((rows, cols)) / np.sqrt(rows)
    truth = np.zeros(cols)
    truth[rng.choice(cols, sparsity, replace=False)] = rng.standard_normal(sparsity)
    b = A @ truth + 0.01 * rng.standard_normal(rows)
    lam = lam_ratio * float(np.abs(A.T @ b).max())
    return A, b, lam


def lasso_rules(seed=0, rows=200, cols=1000, n_blocks=20, max_iters=200000):
    checks = Checks("lasso_rules")
    A, b, lam = lasso_instance(seed, rows, cols)
    f_ref = lasso_reference(A, b, lam)
    rules = {
        "cyclic": SelectionRule.cyclic(n_blocks),
        "essentially_cyclic": SelectionRule.essentially_cyclic(n_blocks, seed=seed),
        "gauss_southwell": SelectionRule.gauss_southwell(n_blocks, q=0.5),
        "mbi": SelectionRule.mbi(n_blocks),
        "randomized": SelectionRule.randomized(n_blocks, seed=seed),
    }
    stop = StopCriteria(max_iters=max_iters, objective_rel_change_tol=1e-14)
    finals = {}
    for name, rule in rules.items():
        _, trace = lasso_bcpg(A, b, lam, n_blocks, rule, stop)
        finals[name] = trace
        checks.keep(name, trace)
        checks.add(f"{name} monotone", trace.final_f, verify_monotone_descent(trace).passed)
    f_star = min([f_ref] + [t.final_f for t in finals.values()])
    for name, trace in finals.items():
        checks.add(f"{name} reaches f* + 1e-6", trace.final_f - f_star, trace.final_f <= f_star + 1e-6)
    rate = estimate_rate_exponent(finals["cyclic"], f_star, floor=1e-9)
    checks.add("cyclic log-log tail slope <= -0.9", rate.exponent, rate.exponent <= -0.9)

    lam_big = float(np.abs(A.T @ b).max())
    x, _ = lasso_bcpg(A, b, lam_big, n_blocks, SelectionRule.cyclic(n_blocks), StopCriteria(max_iters=10 * n_blocks))
    checks.add("lam >= |A'b|_inf gives exactly 0", float(np.abs(x).max()), np.all(x == 0.0))
    return checks


def random_channels(rng, K, N, M):
    return (rng.standard_normal((K, K, N, M)) + 1j * rng.standard_normal((K, K, N, M))) / np.sqrt(2)


def first_settled_iteration(trace, tol=1e-6):
    """First receiver-step iteration whose objective moved less than tol since the previous one."""
    f = {rec.r: rec.f for rec in trace.records}
    for r in sorted(f):
        if r % 2 == 1 and r - 2 in f and abs(f[r] - f[r - 2]) < tol:
            return r
    return None


def wmmse_smoke(seed=0, n_seeds=20):
    checks = Checks("wmmse_smoke")
    P, sigma2 = 1.0, 1.0

    h = np.array([[[[0.8 + 0.6j]]]])
    beams, trace = wmmse_design(h, P, sigma2, stop=StopCriteria(max_iters=200), seed=seed)
    expected = np.log1p(P * abs(h[0, 0, 0, 0]) ** 2 / sigma2)
    checks.add("single user rate error", abs(beams.rates[0] - expected), abs(beams.rates[0] - expected) <= 1e-8)
    checks.keep("single_user", trace)

    rng = np.random.default_rng(seed)
    H = random_channels(rng, 3, 2, 2)
    for k in range(3):
        for j in range(3):
            if j != k:
                H[k, j] = 0.0
    beams, _ = wmmse_design(H, P, sigma2, stop=StopCriteria(max_iters=400), seed=seed)
    single = [wmmse_design(H[k : k + 1, k : k + 1], P, sigma2, stop=StopCriteria(max_iters=400), seed=seed)[0].rates[0] for k in range(3)]
    err = float(np.abs(beams.rates - np.array(single)).max())
    checks.add("decoupled users match single-user rates", err, err <= 1e-6)

    converged = 0
    for s in range(n_seeds):
        H = random_channels(np.random.default_rng(seed + 100 + s), 3, 2, 2)
        beams, trace = wmmse_design(H, P, sigma2, stop=StopCriteria(max_iters=100), seed=seed + s)
        monotone = verify_monotone_descent(trace, 1e-10).passed
        feasible = float(np.max(beams.powers - P)) <= 1e-9
        settled = first_settled_iteration(trace) is not None
        converged += monotone and feasible and settled
        if s == 0:
            checks.keep("random_k3", trace)
    needed = int(np.ceil(0.9 * n_seeds))
    checks.add(f"random K=3 converged on >= {needed}/{n_seeds}", converged, converged >= needed)
    return checks


def bsumm_ex4(seed=0):
    checks = Checks("bsumm_ex4")
    fx = build_pathology("ex4_coupling")
    _, trace = run_bsum(
        fx.problem, Surrogate.exact(), SelectionRule.cyclic(2), _no_tolerances(100), fx.start, coupling="slice"
    )
    checks.add("BSUM stays at f = 4", trace.final_f, trace.final_f == 4.0)
    stop = StopCriteria(max_iters=10000, objective_rel_change_tol=1e-14, feasibility_tol=1e-9)
    x, lam, trace = run_bsumm(fx.problem, Surrogate.proximal(1.0), rho=1.0, stop=stop, x0=fx.start)
    checks.add("BSUMM objective 2 +- 1e-6", trace.final_f, abs(trace.final_f - 2.0) <= 1e-6)
    residual = fx.problem.coupling.residual_norm(x)
    checks.add("BSUMM residual <= 1e-6", residual, residual <= 1e-6)
    checks.add("BSUMM iterate near (1, 1)", float(np.abs(x.flatten() - 1.0).max()), np.allclose(x.flatten(), 1.0, atol=1e-5))
    checks.keep("bsumm", trace)
    return checks


def least_squares_pool(rng, size=30, dim=3, noise=1e-3):
    a = rng.standard_normal((size, dim))
    x_true = rng.standard_normal(dim)
    b = a @ x_true + noise * rng.standard_normal(size)
    return a, b


def pool_stream(a, b, seed=0):
    def sampler(rng):
        k = int(rng.integers(a.shape[0]))
        return a[k], b[k]

    def builder(xi, z):
        return QuadraticModel.least_squares(*xi)

    def loss(x, xi):
        return float((xi[0] @ x - xi[1]) ** 2)

    return StochasticStream(sampler, builder, loss, family="quadratic", seed=seed)


def ssum_ls(seed=0, draws=10000):
    checks = Checks("ssum_ls")
    rng = np.random.default_rng(seed)
    a, b = least_squares_pool(rng)
    target = np.linalg.lstsq(a, b, rcond=None)[0]
    stop = StopCriteria(max_iters=draws, objective_rel_change_tol=None, stationarity_tol=None)
    x, trace = run_ssum(pool_stream(a, b, seed), FeasibleSet.unconstrained(a.shape[1]), stop)
    err = float(np.abs(x.flatten() - target).max())
    checks.add("pool normal-equations solution within 1e-3", err, err <= 1e-3)
    checks.keep("pool", trace)

    r = 100
    stream = pool_stream(a, b, seed + 1)
    _, short = run_ssum(stream, FeasibleSet.unconstrained(a.shape[1]), _no_tolerances(r), keep_iterates=True)
    replay = np.random.default_rng(stream.seed)
    models = [stream.builder(stream.sampler(replay), short.iterates[k].flatten()) for k in range(r)]
    H = np.mean([m.hess_matrix() for m in models], axis=0)
    lin = np.mean([m.lin for m in models], axis=0)
    agg = short.extras["aggregate"]
    err = max(float(np.abs(agg.hess_matrix() - H).max()), float(np.abs(agg.lin - lin).max()))
    checks.add("aggregate equals stored average", err, err <= 1e-10)

    A = rng.standard_normal((5, 3))
    y = rng.standard_normal(5)
    fixed = StochasticStream(
        lambda g: (A, y),
        lambda xi, z: QuadraticModel(2 * A.T @ A, -2 * A.T @ y, float(y @ y)),
        lambda v, xi: float(np.sum((A @ v - y) ** 2)),
        seed=seed,
    )
    _, t_ssum = run_ssum(fixed, FeasibleSet.unconstrained(3), _no_tolerances(5), keep_iterates=True)
    problem = Problem(
        dims=(3,),
        smooth=lambda x: float(np.sum((A @ x[0] - y) ** 2)),
        smooth_grad=lambda x, i: 2 * A.T @ (A @ x[0] - y),
        name="least_squares",
    )
    _, t_mm = run_bsum(
        problem, Surrogate.quadratic(phi=2 * A.T @ A), SelectionRule.cyclic(1), _no_tolerances(5), keep_iterates=True
    )
    err = max(
        float(np.abs(p.flatten() - q.flatten()).max()) for p, q in zip(t_ssum.iterates, t_mm.iterates)
    )
    checks.add("degenerate stream reproduces MM", err, err <= 1e-10)
    return checks


def psca_naive_vs_damped(seed=0):
    checks = Checks("psca_naive_vs_damped")
    fx = build_pathology("naive_parallel")
    _, trace = run_psca(fx.problem, Surrogate.exact(), StepsizeSchedule.constant(1.0), stop=StopCriteria(max_iters=1000), x0=fx.start)
    period = trace.cycle.period if trace.cycle is not None else 0
    checks.add("naive parallel oscillates with period 2", period, trace.terminal_status == "detected_cycle" and period == 2)
    checks.keep("naive", trace)
    _, trace = run_psca(
        fx.problem,
        Surrogate.exact(),
        StepsizeSchedule.diminishing(gamma0=1.0),
        stop=StopCriteria(max_iters=1000),
        x0=fx.start,
    )
    best = float(min(trace.objective_values))
    checks.add("damped reaches f <= 1e-6", best, best <= 1e-6)
    checks.keep("damped", trace)

    A, b, lam = lasso_instance(seed, rows=30, cols=40)
    problem = make_lasso_problem(A, b, lam, 4)
    stop = StopCriteria(max_iters=400)
    _, t_bsum = run_bsum(problem, Surrogate.quadratic(), SelectionRule.cyclic(4), stop)
    _, t_psca = run_psca(problem, Surrogate.quadratic(), StepsizeSchedule.constant(1.0), SelectionRule.cyclic(4), stop)
    same = len(t_bsum) == len(t_psca)
    err = float(np.abs(t_bsum.objective_values - t_psca.objective_values).max()) if same else np.inf
    checks.add("unit-step single-block PSCA equals BSUM", err, same and err <= 1e-12)
    return checks


EXPERIMENTS = {
    "pathologies": pathologies,
    "cp_swamp": cp_swamp,
    "lasso_rules": lasso_rules,
    "wmmse_smoke": wmmse_smoke,
    "bsumm_ex4": bsumm_ex4,
    "ssum_ls": ssum_ls,
    "psca_naive_vs_damped": psca_naive_vs_damped,
}


def run_experiment(name, seed=0, **params):
    if name not in EXPERIMENTS:
        raise ValueError(f"Unknown experiment {name!r}; valid experiments: {', '.join(EXPERIMENTS)}")
    logger.info(f"Reproducing {name} ...")
    return EXPERIMENTS[name](seed=seed, **params)
