"""Command line entry point: config-driven runs, reproductions and surrogate checks."""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, TypedDict

import numpy as np
import pandas as pd
from attrs import Factory, define
from cattrs import ClassValidationError, Converter, transform_error
from typeguard import TypeCheckError, check_type

from . import remarks
from .core import (
    BlockVector,
    FeasibleSet,
    build_pathology,
    quadratic_penalty,
    read_matrix,
    read_tensor,
    read_vector,
    write_matrix,
    write_tensor,
)
from .engine import StepsizeSchedule, StopCriteria, run_bsum, run_bsumm, run_psca, run_ssum
from .errors import BsumError, ConfigError
from .experiments import EXPERIMENTS, pool_stream, run_experiment
from .results_db import DatabaseManager
from .selection import SelectionRule
from .solvers import (
    CP_MODES,
    ConvexFunction,
    cccp_minimize,
    cp_decompose,
    em_abundance,
    irls_solve,
    lasso_bcpg,
    make_cp_problem,
    make_em_problem,
    make_irls_problem,
    make_lasso_problem,
    make_nmf_problem,
    make_wmmse_problem,
    nmf_factorize,
    wmmse_design,
)
from .surrogates import Surrogate, validate_assumption_a

# Set a basic logging level
logging.basicConfig(level=logging.INFO)

# Logging for this package
logger = logging.getLogger(__name__)

# Set logging level for this package
logger.setLevel(logging.DEBUG)

SOLVERS = ("lasso", "nmf", "irls", "cp", "em", "wmmse", "cccp", "ssum", "pathology")
SEED_ENV = "BSUMKIT_SEED"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PATHOLOGICAL = 2
STATUS_EXIT = {
    "converged": EXIT_OK,
    "max_iters": EXIT_OK,
    "budget": EXIT_OK,
    "detected_cycle": EXIT_PATHOLOGICAL,
    "diverged": EXIT_PATHOLOGICAL,
}

REQUIRED_INPUTS = {
    "lasso": ("A", "b"),
    "nmf": ("V",),
    "irls": ("A", "b"),
    "cp": ("X",),
    "em": ("alpha",),
    "wmmse": ("H",),
    "cccp": ("P", "S"),
    "ssum": ("A", "b"),
    "pathology": (),
}

# Solvers whose block order is part of the method
FIXED_ORDER = ("nmf", "irls", "cp", "em", "wmmse", "cccp", "ssum")


class _LassoRequired(TypedDict):
    lam: float


class LassoParams(_LassoRequired, total=False):
    n_blocks: int


class NmfParams(TypedDict):
    rank: int


class IrlsParams(TypedDict, total=False):
    eta: float
    ridge: float


class _CpRequired(TypedDict):
    rank: int


class CpParams(_CpRequired, total=False):
    mode: str
    gamma: float


class EmParams(TypedDict, total=False):
    n_partitions: int


class _WmmseRequired(TypedDict):
    users: int
    power: float


class WmmseParams(_WmmseRequired, total=False):
    sigma2: float
    n_workers: int


class CccpParams(TypedDict, total=False):
    quartic: float
    x0: List[float]


class SsumParams(TypedDict, total=False):
    radius: float


class _PathologyRequired(TypedDict):
    name: str


class PathologyParams(_PathologyRequired, total=False):
    epsilon: float
    bound: float
    bounded: bool
    driver: str
    step: float
    rho: float


PARAM_SCHEMAS = {
    "lasso": LassoParams,
    "nmf": NmfParams,
    "irls": IrlsParams,
    "cp": CpParams,
    "em": EmParams,
    "wmmse": WmmseParams,
    "cccp": CccpParams,
    "ssum": SsumParams,
    "pathology": PathologyParams,
}


@define
class RuleConfig:
    kind: str = "cyclic"
    q: float = 1.0
    p: Optional[List[float]] = None
    schedule: Optional[List[List[int]]] = None
    seed: Optional[int] = None


@define
class SurrogateConfig:
    kind: str = "exact"
    gamma: float = 1.0
    diminishing: bool = False
    safety: float = 1.01


@define
class OutputConfig:
    trace: str = "trace.csv"
    solution: Optional[str] = None
    results_db: Optional[str] = None


@define
class ValidationConfig:
    n_samples: int = 1000
    seed: int = 0
    scale: float = 1.0


@define
class RunConfig:
    """A JSON run configuration. Input paths are relative to the config file,
    output paths to the output directory."""

    solver: str
    inputs: Dict[str, str] = Factory(dict)
    params: Dict[str, Any] = Factory(dict)
    rule: Optional[RuleConfig] = None
    stop: StopCriteria = Factory(StopCriteria)
    seed: int = 0
    output: OutputConfig = Factory(OutputConfig)
    timing: bool = False
    surrogate: Optional[SurrogateConfig] = None
    validation: ValidationConfig = Factory(ValidationConfig)
    base_dir: str = "."


converter = Converter(forbid_extra_keys=True)


def load_config(path):
    """Parse and check a run configuration.

    Raises:
        ConfigError: bad JSON (with line and column), unknown keys, wrong
            types (with the key path), unknown solver or missing inputs.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e.strerror}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: the top level must be a JSON object")
    if "base_dir" in raw:
        raise ConfigError("$.base_dir: extra field")
    raw["base_dir"] = str(path.resolve().parent)
    try:
        cfg = converter.structure(raw, RunConfig)
    except ClassValidationError as e:
        raise ConfigError("\n".join(transform_error(e, path="$"))) from e
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from e

    if cfg.solver not in SOLVERS:
        raise ConfigError(f"Unknown solver {cfg.solver!r}; valid solvers: {', '.join(SOLVERS)}")
    try:
        check_type(cfg.params, PARAM_SCHEMAS[cfg.solver])
    except TypeCheckError as e:
        raise ConfigError(f"$.params: {e}") from e
    missing = [k for k in REQUIRED_INPUTS[cfg.solver] if k not in cfg.inputs]
    extra = [k for k in cfg.inputs if k not in REQUIRED_INPUTS[cfg.solver]]
    if missing:
        raise ConfigError(f"$.inputs: {cfg.solver} needs {', '.join(missing)}")
    if extra:
        raise ConfigError(f"$.inputs: unknown inputs {', '.join(extra)} for {cfg.solver}")
    for name in cfg.inputs:
        if not input_path(cfg, name).is_file():
            raise ConfigError(f"$.inputs.{name}: no such file {input_path(cfg, name)}")
    if cfg.rule is not None and cfg.solver in FIXED_ORDER:
        raise ConfigError(f"$.rule: {cfg.solver} fixes its own block order")

    cfg.seed = seed_from_env(cfg.seed)
    return cfg


def seed_from_env(default):
    """The integer in BSUMKIT_SEED, or `default` when it is unset."""
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is None:
        return default
    try:
        return int(env_seed)
    except ValueError as e:
        raise ConfigError(f"{SEED_ENV}={env_seed!r} is not an integer") from e


def input_path(cfg, name):
    return Path(cfg.base_dir) / cfg.inputs[name]


def build_rule(cfg, n):
    spec = cfg.rule or RuleConfig()
    seed = cfg.seed if spec.seed is None else spec.seed
    if spec.kind == "cyclic":
        return SelectionRule.cyclic(n)
    if spec.kind == "essentially_cyclic":
        return SelectionRule.essentially_cyclic(n, schedule=spec.schedule, seed=seed)
    if spec.kind == "gauss_southwell":
        return SelectionRule.gauss_southwell(n, q=spec.q)
    if spec.kind == "mbi":
        return SelectionRule.mbi(n)
    if spec.kind == "randomized":
        return SelectionRule.randomized(n, p=spec.p, seed=seed)
    if spec.kind == "all_blocks":
        return SelectionRule.all_blocks(n)
    raise ConfigError(f"$.rule.kind: unknown rule {spec.kind!r}")


def build_surrogate(spec, default="exact"):
    spec = spec or SurrogateConfig(kind=default)
    if spec.kind == "exact":
        return Surrogate.exact()
    if spec.kind == "proximal":
        return Surrogate.proximal(spec.gamma, diminishing=spec.diminishing)
    if spec.kind == "quadratic":
        return Surrogate.quadratic(safety=spec.safety)
    if spec.kind == "linear":
        return Surrogate.linear()
    if spec.kind == "jensen":
        return Surrogate.jensen()
    raise ConfigError(f"$.surrogate.kind: unknown surrogate {spec.kind!r}")


def read_channels(path, K):
    """(K*N) x (K*M) complex block matrix -> H[k, j] of shape N x M."""
    G = np.asarray(read_matrix(path), dtype=complex)
    rows, cols = G.shape
    if K < 1 or rows % K or cols % K:
        raise ConfigError(f"Channel matrix {rows}x{cols} does not split into {K}x{K} blocks")
    N, M = rows // K, cols // K
    return G.reshape(K, N, K, M).transpose(0, 2, 1, 3)


def _solution_path(out_dir, name, suffix=""):
    stem = Path(name)
    if suffix:
        stem = stem.with_name(f"{stem.stem}_{suffix}{stem.suffix or '.mtx'}")
    return Path(out_dir) / stem


def _run_lasso(cfg):
    A = read_matrix(input_path(cfg, "A"))
    b = read_vector(input_path(cfg, "b"))
    n_blocks = cfg.params.get("n_blocks", 1)
    surrogate = build_surrogate(cfg.surrogate, default="quadratic")
    x, trace = lasso_bcpg(A, b, cfg.params["lam"], n_blocks, build_rule(cfg, n_blocks), cfg.stop, surrogate=surrogate)
    return {"x": x}, trace, "lasso"


def _run_nmf(cfg):
    V = read_matrix(input_path(cfg, "V"))
    factors, trace = nmf_factorize(V, cfg.params["rank"], stop=cfg.stop, seed=cfg.seed)
    return {"W": factors.W, "H": factors.H}, trace, "nmf"


def _irls_inputs(cfg):
    A = read_matrix(input_path(cfg, "A"))
    b = read_vector(input_path(cfg, "b"))
    terms = [(A[j : j + 1], -b[j : j + 1]) for j in range(A.shape[0])]
    ridge = cfg.params.get("ridge")
    h = quadratic_penalty(np.sqrt(ridge) * np.eye(A.shape[1]), np.zeros(A.shape[1])) if ridge else None
    return terms, h, cfg.params.get("eta", 1e-6)


def _run_irls(cfg):
    terms, h, eta = _irls_inputs(cfg)
    x, trace = irls_solve(terms, h=h, eta=eta, stop=cfg.stop)
    return {"x": x}, trace, "irls"


def _run_cp(cfg):
    X = read_tensor(input_path(cfg, "X"))
    mode = cfg.params.get("mode", "plain_als")
    if mode not in CP_MODES:
        raise ConfigError(f"$.params.mode: unknown mode {mode!r}; valid modes: {', '.join(CP_MODES)}")
    factors, trace = cp_decompose(
        X, cfg.params["rank"], mode=mode, gamma=cfg.params.get("gamma", 1.0), stop=cfg.stop, seed=cfg.seed
    )
    return {"A": factors.A, "B": factors.B, "C": factors.C}, trace, "cp"


def _run_em(cfg):
    alpha = read_matrix(input_path(cfg, "alpha"))
    model, trace = em_abundance(alpha, stop=cfg.stop, n_partitions=cfg.params.get("n_partitions", 1))
    return {"rho": model.rho}, trace, "em_abundance"


def _run_wmmse(cfg):
    H = read_channels(input_path(cfg, "H"), cfg.params["users"])
    beams, trace = wmmse_design(
        H,
        cfg.params["power"],
        cfg.params.get("sigma2", 1.0),
        stop=cfg.stop,
        seed=cfg.seed,
        n_workers=cfg.params.get("n_workers", 1),
    )
    return {"v": beams.v, "u": beams.u}, trace, "wmmse"


def _quadratic_form(cfg, name, d=None):
    M = np.asarray(read_matrix(input_path(cfg, name)), dtype=float)
    d = M.shape[0] if d is None else d
    if M.shape != (d, d) or not np.allclose(M, M.T):
        raise ConfigError(f"$.inputs.{name}: expected a symmetric {d}x{d} matrix, got {M.shape[0]}x{M.shape[1]}")
    if np.linalg.eigvalsh(M).min() < -1e-10 * max(1.0, np.abs(M).max()):
        raise ConfigError(f"$.inputs.{name}: matrix is not positive semidefinite")
    return M


def _dc_pair(cfg):
    """g1(x) = x'Px/2 + quartic |x|_4^4 / 4 and g2(x) = x'Sx/2 from a cccp config."""
    P = _quadratic_form(cfg, "P")
    d = P.shape[0]
    S = _quadratic_form(cfg, "S", d)
    quartic = cfg.params.get("quartic", 0.0)
    if quartic < 0:
        raise ConfigError("$.params.quartic: must be nonnegative")

    def g1_value(x):
        return 0.5 * float(x @ P @ x) + 0.25 * quartic * float(np.sum(x**4))

    def g1_grad(x):
        return P @ x + quartic * x**3

    closed_form = None
    if quartic == 0 and np.linalg.eigvalsh(P).min() > 0:

        def closed_form(c):
            return np.linalg.solve(P, c)

    g1 = ConvexFunction(g1_value, g1_grad, closed_form)
    g2 = ConvexFunction(lambda x: 0.5 * float(x @ S @ x), lambda x: S @ x)
    x0 = cfg.params.get("x0")
    if x0 is None:
        x0 = np.random.default_rng(cfg.seed).standard_normal(d)
    elif len(x0) != d:
        raise ConfigError(f"$.params.x0: expected {d} entries, got {len(x0)}")
    return g1, g2, np.asarray(x0, dtype=float)


def _run_cccp(cfg):
    g1, g2, x0 = _dc_pair(cfg)
    x, trace = cccp_minimize(g1, g2, x0, stop=cfg.stop)
    return {"x": x}, trace, "dc_quadratic"


def _run_ssum(cfg):
    A = np.asarray(read_matrix(input_path(cfg, "A")), dtype=float)
    b = read_vector(input_path(cfg, "b"))
    if A.shape[0] != b.size:
        raise ConfigError(f"$.inputs: A has {A.shape[0]} rows but b has {b.size} entries")
    d = A.shape[1]
    radius = cfg.params.get("radius")
    fset = FeasibleSet.unconstrained(d) if radius is None else FeasibleSet.ball(radius, d)
    x, trace = run_ssum(pool_stream(A, b, cfg.seed), fset, cfg.stop)
    return {"x": x.flatten()}, trace, "streaming_least_squares"


def _pathology_fixture(params):
    extra = {k: params[k] for k in ("epsilon", "bound", "bounded") if k in params}
    try:
        return build_pathology(params["name"], **extra)
    except ValueError as e:
        raise ConfigError(f"$.params.name: {e}") from e


def _run_pathology(cfg):
    fx = _pathology_fixture(cfg.params)
    problem = fx.problem
    driver = cfg.params.get("driver", "bsum")
    surrogate = build_surrogate(cfg.surrogate)
    rule = build_rule(cfg, problem.n_blocks)
    if driver == "bsum":
        coupling = "slice" if problem.coupling is not None else "reject"
        x, trace = run_bsum(problem, surrogate, rule, cfg.stop, fx.start, coupling=coupling)
    elif driver == "psca":
        step = cfg.params.get("step")
        schedule = StepsizeSchedule.constant(step) if step is not None else StepsizeSchedule.diminishing()
        rule = rule if cfg.rule is not None else SelectionRule.all_blocks(problem.n_blocks)
        x, trace = run_psca(problem, surrogate, schedule, rule, cfg.stop, fx.start)
    elif driver == "bsumm":
        x, _, trace = run_bsumm(problem, surrogate, cfg.params.get("rho", 1.0), rule=rule, stop=cfg.stop, x0=fx.start)
    else:
        raise ConfigError(f"$.params.driver: unknown driver {driver!r}; valid drivers: bsum, psca, bsumm")
    return {"x": x.flatten()}, trace, fx.name


RUNNERS = {
    "lasso": _run_lasso,
    "nmf": _run_nmf,
    "irls": _run_irls,
    "cp": _run_cp,
    "em": _run_em,
    "wmmse": _run_wmmse,
    "cccp": _run_cccp,
    "ssum": _run_ssum,
    "pathology": _run_pathology,
}


def run_config(path, out_dir="."):
    """Run one configuration and write its trace and solution files.

    Returns:
        exit status: 0 converged / max_iters / budget, 2 detected_cycle /
        diverged, 1 for config or input errors
    """
    try:
        cfg = load_config(path)
        logger.info(f"Loaded {cfg.solver} configuration from {path} (seed {cfg.seed})")
        solution, trace, problem_name = RUNNERS[cfg.solver](cfg)
    except (BsumError, ValueError, OSError) as e:
        print(f"bsumkit: {e}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out_dir / cfg.output.trace, timing=cfg.timing)
    if cfg.output.solution:
        for name, value in solution.items():
            suffix = name if len(solution) > 1 else ""
            target = _solution_path(out_dir, cfg.output.solution, suffix)
            value = np.asarray(value)
            if value.ndim == 3:
                write_tensor(target, value)
            else:
                write_matrix(target, value)
    if cfg.output.results_db:
        db = DatabaseManager(str(out_dir / cfg.output.results_db))
        db.save_run(
            f"{Path(path).stem}-{cfg.seed}",
            trace,
            solver=cfg.solver,
            problem=problem_name,
            rule=(cfg.rule or RuleConfig()).kind if cfg.solver not in FIXED_ORDER else "fixed",
            surrogate=cfg.surrogate.kind if cfg.surrogate else None,
            seed=cfg.seed,
            config_path=str(path),
        )
    print(remarks.run_summary(trace, cfg.solver, problem_name))
    return STATUS_EXIT[trace.terminal_status]


def reproduce(name, out_dir="./bsumkit-out", results_db="results.db"):
    """Run a bundled reproduction, write its traces and checks table and, unless
    `results_db` is empty, store both in the results database.

    Returns:
        exit status: 0 all checks pass, 2 some check fails, 1 on errors
    """
    try:
        seed = seed_from_env(0)
        checks = run_experiment(name, seed=seed)
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for label, trace in checks.traces.items():
            trace.to_csv(out_dir / f"{label}.csv")
        table = checks.frame()
        table.to_csv(out_dir / f"{name}_checks.csv", index=False, float_format="%.17g", lineterminator="\n")
        if results_db:
            db = DatabaseManager(str(out_dir / results_db))
            for label, trace in checks.traces.items():
                db.save_run(f"{label}-{seed}", trace, problem=label, seed=seed)
            db.save_checks(table.assign(seed=seed))
    except (BsumError, ValueError, OSError) as e:
        print(f"bsumkit: {e}", file=sys.stderr)
        return EXIT_CONFIG
    with pd.option_context("display.max_rows", None, "display.width", 120):
        print(table.to_string(index=False))
    print(remarks.experiment_summary(table))
    return EXIT_OK if table["pass"].all() else EXIT_PATHOLOGICAL


def _random_blocks(problem, rng):
    return BlockVector(tuple(rng.standard_normal(m) for m in problem.dims))


def _validation_target(cfg):
    """Problem, point and surrogate that `validate-surrogate` checks.

    irls, em and wmmse check the bound their solver minimizes, whatever the
    surrogate section says."""
    rng = np.random.default_rng(cfg.seed)
    if cfg.solver == "pathology":
        fx = _pathology_fixture(cfg.params)
        return fx.problem, fx.start, build_surrogate(cfg.surrogate)
    if cfg.solver == "lasso":
        A = read_matrix(input_path(cfg, "A"))
        b = read_vector(input_path(cfg, "b"))
        problem = make_lasso_problem(A, b, cfg.params["lam"], cfg.params.get("n_blocks", 1))
        return problem, _random_blocks(problem, rng), build_surrogate(cfg.surrogate, default="quadratic")
    if cfg.solver == "nmf":
        V = read_matrix(input_path(cfg, "V"))
        problem = make_nmf_problem(V, cfg.params["rank"])
        z = BlockVector(tuple(np.abs(rng.standard_normal(m)) + 0.1 for m in problem.dims))
        return problem, z, build_surrogate(cfg.surrogate, default="quadratic")
    if cfg.solver == "cp":
        problem = make_cp_problem(read_tensor(input_path(cfg, "X")), cfg.params["rank"])
        return problem, _random_blocks(problem, rng), build_surrogate(cfg.surrogate)
    if cfg.solver == "irls":
        terms, h, eta = _irls_inputs(cfg)
        problem, surrogate = make_irls_problem(terms, h, eta)
        return problem, _random_blocks(problem, rng), surrogate
    if cfg.solver == "em":
        alpha = read_matrix(input_path(cfg, "alpha"))
        problem, surrogate = make_em_problem(alpha, cfg.params.get("n_partitions", 1))
        # interior point, clear of the simplex faces
        rho = 1.0 + rng.uniform(size=problem.dims[0])
        return problem, BlockVector((rho / rho.sum(),)), surrogate
    if cfg.solver == "wmmse":
        K = cfg.params["users"]
        H = read_channels(input_path(cfg, "H"), K)
        problem, surrogate = make_wmmse_problem(H, cfg.params["power"], cfg.params.get("sigma2", 1.0))
        z = _random_blocks(problem, rng)
        # transmit beams at half their power radius
        beams = tuple(0.5 * problem.sets[i].radius * z[i] / np.linalg.norm(z[i]) for i in range(K, 2 * K))
        return problem, BlockVector(z.blocks[:K] + beams), surrogate
    raise ConfigError(f"validate-surrogate has no surrogate to check for {cfg.solver} configs")


def validate_surrogate(path):
    try:
        cfg = load_config(path)
        problem, z, surrogate = _validation_target(cfg)
        v = cfg.validation
        report = validate_assumption_a(surrogate, problem, z, n_samples=v.n_samples, seed=v.seed, scale=v.scale)
    except (BsumError, ValueError, OSError) as e:
        print(f"bsumkit: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(report.to_frame().to_string(index=False))
    return EXIT_OK if report.passed else EXIT_PATHOLOGICAL


def build_parser():
    parser = argparse.ArgumentParser(prog="bsumkit", description="Block successive upper bound minimization toolkit")
    verbs = parser.add_subparsers(dest="verb", required=True)

    run = verbs.add_parser("run", help="run a JSON configuration")
    run.add_argument("config")
    run.add_argument("--out", default=".", help="directory for trace and solution files")

    rep = verbs.add_parser("reproduce", help="run a bundled reproduction and print its checks")
    rep.add_argument("name", help=", ".join(EXPERIMENTS))
    rep.add_argument("--out", default="./bsumkit-out")
    rep.add_argument("--results-db", default="results.db", help="database file under --out; empty to skip")

    val = verbs.add_parser("validate-surrogate", help="check the surrogate of a configuration")
    val.add_argument("config")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.verb == "run":
        return run_config(args.config, args.out)
    if args.verb == "reproduce":
        return reproduce(args.name, args.out, args.results_db)
    return validate_surrogate(args.config)


if __name__ == "__main__":
    sys.exit(main())
