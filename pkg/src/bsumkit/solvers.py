"""Solvers built on the BSUM engine: LASSO block proximal gradient, NMF, IRLS,
CP/ALS tensor decomposition, CCCP, EM abundance estimation and WMMSE beamforming."""

import logging
from typing import Callable, Optional

import numpy as np
from attrs import define, evolve
from scipy import linalg, optimize

from .core import BlockVector, FeasibleSet, Problem, l1_norm
from .engine import StopCriteria, run_bsum
from .errors import BisectionError, DegenerateInstanceError, UnboundedSubproblemError
from .selection import SelectionRule
from .surrogates import Surrogate, prox_gradient_loop, InnerBudget
from .utils import unfold

# Set a basic logging level
logging.basicConfig(level=logging.INFO)

# Logging for this package
logger = logging.getLogger(__name__)

# Set logging level for this package
logger.setLevel(logging.DEBUG)

NMF_EPS = 1e-12
EM_STEP_TOL = 1e-12
CP_MODES = ("plain_als", "proximal_als", "diminishing_proximal")


def _flush_notes(trace, notes):
    for message in notes:
        trace.note(message)


# ---------------------------------------------------------------------------
# LASSO by block coordinate proximal gradient


def lasso_partition(n_cols, partition=None):
    """Column index arrays of each block.

    `partition` may be None (one block), a number of contiguous blocks, or
    explicit index sequences covering every column exactly once.
    """
    if partition is None:
        partition = 1
    if isinstance(partition, (int, np.integer)):
        if partition < 1 or partition > n_cols:
            raise ValueError(f"Cannot split {n_cols} columns into {partition} blocks")
        return tuple(np.array_split(np.arange(n_cols), partition))
    blocks = tuple(np.asarray(cols, dtype=int).reshape(-1) for cols in partition)
    for k, cols in enumerate(blocks):
        if cols.size == 0:
            raise ValueError(f"Block {k} of the partition is empty")
    allcols = np.sort(np.concatenate(blocks))
    if not np.array_equal(allcols, np.arange(n_cols)):
        raise ValueError("Partition must cover every column exactly once")
    return blocks


def make_lasso_problem(A, b, lam, partition=None):
    """1/2 |Ax - b|^2 + lam |x|_1 with x split into column blocks."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.shape[0] != b.size:
        raise ValueError(f"A has {A.shape[0]} rows but b has {b.size} entries")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    blocks = lasso_partition(A.shape[1], partition)
    sub = tuple(A[:, cols] for cols in blocks)
    cache = {"pair": (None, None)}

    def residual(x):
        cached, res = cache["pair"]
        if cached is not x:
            res = -b.copy()
            for Ai, xi in zip(sub, x.blocks):
                res += Ai @ xi
            cache["pair"] = (x, res)
        return res

    def smooth(x):
        res = residual(x)
        return 0.5 * float(res @ res)

    def grad(x, i):
        return sub[i].T @ residual(x)

    return Problem(
        dims=tuple(cols.size for cols in blocks),
        smooth=smooth,
        smooth_grad=grad,
        nonsmooth=tuple(l1_norm(lam) for _ in blocks),
        name="lasso",
        block_lipschitz=tuple(float(linalg.svdvals(Ai)[0]) ** 2 for Ai in sub),
        convex=True,
    )


def assemble_blocks(x, blocks, n_cols):
    full = np.zeros(n_cols)
    for cols, xi in zip(blocks, x.blocks):
        full[cols] = xi
    return full


def lasso_bcpg(A, b, lam, partition=None, rule=None, stop=None, x0=None, surrogate=None, record_gap=False):
    """Block coordinate proximal gradient for the LASSO.

    Each block step is x_j <- soft(x_j - grad_j / L_j, lam / L_j) with
    L_j = |A_j|_2^2 times the surrogate safety factor.

    Returns:
        (full solution vector, Trace)
    """
    A = np.asarray(A, dtype=float)
    problem = make_lasso_problem(A, b, lam, partition)
    blocks = lasso_partition(A.shape[1], partition)
    rule = SelectionRule.cyclic(problem.n_blocks) if rule is None else rule
    surrogate = Surrogate.quadratic() if surrogate is None else surrogate
    start = None
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        start = BlockVector(tuple(x0[cols] for cols in blocks))
    x, trace = run_bsum(problem, surrogate, rule, stop, start, record_gap=record_gap)
    return assemble_blocks(x, blocks, A.shape[1]), trace


# ---------------------------------------------------------------------------
# NMF by multiplicative updates


@define(frozen=True, eq=False)
class NmfFactors:
    W: np.ndarray
    H: np.ndarray

    @property
    def product(self):
        return self.W @ self.H


def make_nmf_problem(V, K):
    """1/2 |V - WH|_F^2 over W, H >= 0, blocks ordered (H, W)."""
    V = np.asarray(V, dtype=float)
    M, N = V.shape

    def unpack(x):
        return x[1].reshape(M, K), x[0].reshape(K, N)

    def smooth(x):
        W, H = unpack(x)
        R = W @ H - V
        return 0.5 * float(np.sum(R * R))

    def grad(x, i):
        W, H = unpack(x)
        R = W @ H - V
        return (W.T @ R).reshape(-1) if i == 0 else (R @ H.T).reshape(-1)

    return Problem(
        dims=(K * N, M * K),
        sets=(FeasibleSet.nonneg(K * N), FeasibleSet.nonneg(M * K)),
        smooth=smooth,
        smooth_grad=grad,
        name="nmf",
    )


def nmf_curvature(V, K, eps=NMF_EPS):
    """Diagonal majorizer of the block Hessian that turns the quadratic bound's
    minimizer into the multiplicative update."""
    M, N = np.shape(V)

    def phi(i, z):
        W, H = z[1].reshape(M, K), z[0].reshape(K, N)
        if i == 0:
            num, den = W.T @ W @ H + eps, H
        else:
            num, den = W @ H @ H.T + eps, W
        if np.any(den <= 0):
            raise DegenerateInstanceError(f"Factor {'H' if i == 0 else 'W'} has a zero entry; the update is undefined")
        return (num / den).reshape(-1)

    return phi


def nmf_factorize(V, K, init=None, stop=None, seed=0, record_gap=False):
    """Lee-Seung multiplicative NMF as two-block BSUM with diagonal quadratic bounds.

    Args:
        V: nonnegative M x N matrix
        K: rank
        init: (W, H) strictly positive, or None for |N(0,1)| + 0.1 seeded by `seed`

    Returns:
        (NmfFactors, Trace)
    """
    V = np.asarray(V, dtype=float)
    if np.any(V < 0):
        raise ValueError("V must be entrywise nonnegative")
    M, N = V.shape
    if init is None:
        rng = np.random.default_rng(seed)
        W0 = np.abs(rng.standard_normal((M, K))) + 0.1
        H0 = np.abs(rng.standard_normal((K, N))) + 0.1
    else:
        W0, H0 = (np.asarray(a, dtype=float) for a in init)
        if W0.shape != (M, K) or H0.shape != (K, N):
            raise ValueError(f"Initial factors must be {M}x{K} and {K}x{N}")
        if np.any(W0 <= 0) or np.any(H0 <= 0):
            raise ValueError("Initial factors must be strictly positive")
    problem = make_nmf_problem(V, K)
    surrogate = Surrogate.quadratic(phi=nmf_curvature(V, K))
    x0 = BlockVector((H0.reshape(-1), W0.reshape(-1)))
    x, trace = run_bsum(problem, surrogate, SelectionRule.cyclic(2), stop, x0, record_gap=record_gap)
    return NmfFactors(W=x[1].reshape(M, K).copy(), H=x[0].reshape(K, N).copy()), trace


# ---------------------------------------------------------------------------
# IRLS


def _irls_terms(terms):
    checked = []
    for j, (A, b) in enumerate(terms):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise ValueError(f"Term {j}: A has {A.shape[0]} rows but b has {b.size} entries")
        checked.append((A, b))
    dims = {A.shape[1] for A, _ in checked}
    if len(dims) != 1:
        raise ValueError("All terms must act on the same variable")
    return checked


def _irls_weights(terms, eta, z):
    return np.array([np.sqrt(float(np.sum((A @ z + b) ** 2)) + eta**2) for A, b in terms])


def smoothed_norms(terms, eta, x):
    """g(x) = sum_j sqrt(|A_j x + b_j|^2 + eta^2)."""
    return float(np.sum(_irls_weights(terms, eta, np.asarray(x, dtype=float))))


def irls_bound(terms, eta, x, z):
    """Arithmetic-geometric upper bound of the smoothed norms, tight at x = z."""
    x = np.asarray(x, dtype=float)
    w = _irls_weights(terms, eta, np.asarray(z, dtype=float))
    sq = np.array([float(np.sum((A @ x + b) ** 2)) + eta**2 for A, b in terms])
    return 0.5 * float(np.sum(sq / w + w))


def make_irls_problem(terms, h=None, eta=1e-6, notes=None):
    """Smoothed sum of norms plus h, with the arithmetic-geometric bound as its
    surrogate. The surrogate minimizer solves the weighted normal equations; a
    quadratic h is folded into them and any other h goes to an inner proximal
    gradient loop.

    Returns:
        (Problem, Surrogate)
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    terms = _irls_terms(terms)
    d = terms[0][0].shape[1]
    notes = [] if notes is None else notes

    def smooth(x):
        return smoothed_norms(terms, eta, x[0])

    def grad(x, i):
        z = x[0]
        w = _irls_weights(terms, eta, z)
        return sum(A.T @ (A @ z + b) / wj for (A, b), wj in zip(terms, w))

    problem = Problem(
        dims=(d,),
        smooth=smooth,
        smooth_grad=grad,
        nonsmooth=(h,),
        name="irls",
        convex=True,
    )

    def value(i, x, z):
        extra = h(x) if h is not None else 0.0
        return irls_bound(terms, eta, x, z[0]) + extra

    def minimizer(i, z):
        w = _irls_weights(terms, eta, z[0])
        G = sum(A.T @ A / wj for (A, _), wj in zip(terms, w))
        rhs = -sum(A.T @ b / wj for (A, b), wj in zip(terms, w))
        if h is not None and h.quadratic is not None:
            Q, q, _ = h.quadratic
            G = G + Q
            rhs = rhs - q
        elif h is not None:
            L = float(np.linalg.eigvalsh(G).max())
            return prox_gradient_loop(
                lambda v: G @ v - rhs,
                L,
                z[0],
                h,
                FeasibleSet.unconstrained(d),
                InnerBudget(),
                value=lambda v: 0.5 * float(v @ G @ v) - float(rhs @ v),
            )
        try:
            factor = linalg.cho_factor(G)
            return linalg.cho_solve(factor, rhs)
        except linalg.LinAlgError:
            delta = 1e-10 * max(1.0, float(np.trace(G)) / d)
            notes.append(f"singular weighted normal matrix; regularized with {delta:.3g} I")
            return linalg.solve(G + delta * np.eye(d), rhs, assume_a="sym")

    return problem, Surrogate.custom(value, minimizer, name="irls")


def irls_solve(terms, h=None, eta=1e-6, stop=None, x0=None):
    """Minimize h(x) + sum_j sqrt(|A_j x + b_j|^2 + eta^2) by reweighted least squares.

    Returns:
        (solution vector, Trace)
    """
    notes = []
    problem, surrogate = make_irls_problem(terms, h, eta, notes)
    d = problem.dims[0]
    start = BlockVector((np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).reshape(-1),))
    x, trace = run_bsum(problem, surrogate, SelectionRule.cyclic(1), stop, start)
    _flush_notes(trace, notes)
    return x[0].copy(), trace


# ---------------------------------------------------------------------------
# CP decomposition by (proximal) ALS


@define(frozen=True, eq=False)
class CpFactors:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    fit: float

    def full(self):
        return cp_full(self.A, self.B, self.C)


def cp_full(A, B, C):
    return np.einsum("ir,jr,kr->ijk", A, B, C)


def cp_fit(X, A, B, C):
    return 1.0 - float(np.linalg.norm(X - cp_full(A, B, C)) / np.linalg.norm(X))


def _cp_khatri_rao(factors, mode):
    A, B, C = factors
    if mode == 0:
        return linalg.khatri_rao(C, B)
    if mode == 1:
        return linalg.khatri_rao(C, A)
    return linalg.khatri_rao(B, A)


def make_cp_problem(X, R, notes=None):
    """1/2 |X - [[A, B, C]]|_F^2 with one block per factor matrix (row-major)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 3 or X.size == 0:
        raise ValueError("X must be a nonempty third-order tensor")
    if R < 1:
        raise ValueError("Rank must be at least 1")
    shape = X.shape
    unfoldings = tuple(unfold(X, mode) for mode in range(3))
    notes = [] if notes is None else notes

    def unpack(x):
        return tuple(x[k].reshape(shape[k], R) for k in range(3))

    def smooth(x):
        A, B, C = unpack(x)
        E = X - cp_full(A, B, C)
        return 0.5 * float(np.sum(E * E))

    def gram(factors, mode):
        others = [factors[k] for k in range(3) if k != mode]
        return (others[0].T @ others[0]) * (others[1].T @ others[1])

    def grad(x, i):
        factors = unpack(x)
        G = gram(factors, i)
        return (factors[i] @ G - unfoldings[i] @ _cp_khatri_rao(factors, i)).reshape(-1)

    def block_minimizer(i, z, gamma):
        factors = unpack(z)
        G = gram(factors, i) + gamma * np.eye(R)
        rhs = unfoldings[i] @ _cp_khatri_rao(factors, i) + gamma * factors[i]
        if gamma == 0 and np.linalg.matrix_rank(G) < R:
            delta = 1e-12 * max(1.0, float(np.trace(G)) / R)
            notes.append(f"rank-deficient normal matrix in mode {i}; regularized with {delta:.3g} I")
            G = G + delta * np.eye(R)
        return linalg.solve(G, rhs.T, assume_a="pos").T.reshape(-1)

    return Problem(
        dims=tuple(shape[k] * R for k in range(3)),
        smooth=smooth,
        smooth_grad=grad,
        name="cp",
        block_minimizer=block_minimizer,
    )


def cp_decompose(X, R, mode="plain_als", gamma=1.0, stop=None, seed=0, init=None, record_gap=False):
    """Rank-R CP decomposition as three-block BSUM.

    Modes: plain_als (exact least-squares blocks), proximal_als (adds
    gamma/2 |. - current|^2) and diminishing_proximal (gamma / (r + 1)).
    Iterations count block updates, three per ALS sweep.

    Returns:
        (CpFactors, Trace)
    """
    if mode not in CP_MODES:
        raise ValueError(f"Unknown CP mode {mode!r}; valid modes: {', '.join(CP_MODES)}")
    X = np.asarray(X, dtype=float)
    notes = []
    problem = make_cp_problem(X, R, notes)
    if init is None:
        rng = np.random.default_rng(seed)
        init = tuple(rng.standard_normal((X.shape[k], R)) for k in range(3))
    x0 = BlockVector(tuple(np.asarray(F, dtype=float).reshape(-1) for F in init))
    if mode == "plain_als":
        surrogate = Surrogate.exact()
    else:
        surrogate = Surrogate.proximal(gamma, diminishing=(mode == "diminishing_proximal"))
    x, trace = run_bsum(problem, surrogate, SelectionRule.cyclic(3), stop, x0, record_gap=record_gap)
    _flush_notes(trace, notes)
    A, B, C = (x[k].reshape(X.shape[k], R).copy() for k in range(3))
    return CpFactors(A, B, C, cp_fit(X, A, B, C)), trace


# ---------------------------------------------------------------------------
# CCCP for difference-of-convex programs


@define(frozen=True, eq=False)
class ConvexFunction:
    """A convex function with its gradient; `argmin_linear(c)` optionally returns
    argmin_x value(x) - <c, x> in closed form."""

    value: Callable
    grad: Optional[Callable] = None
    argmin_linear: Optional[Callable] = None

    def __call__(self, x):
        return float(self.value(np.asarray(x, dtype=float)))


def _cccp_step(g1, c, z):
    if g1.argmin_linear is not None:
        x = np.asarray(g1.argmin_linear(c), dtype=float).reshape(-1)
    else:
        res = optimize.minimize(
            lambda v: g1(v) - float(c @ v),
            z,
            jac=None if g1.grad is None else (lambda v: np.asarray(g1.grad(v), dtype=float) - c),
            method="L-BFGS-B",
        )
        x = res.x
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1e8:
        raise UnboundedSubproblemError("Linearized CCCP subproblem is unbounded below")
    return x


def cccp_minimize(g1, g2, x0, stop=None):
    """Minimize g1 - g2 (both convex) by linearizing g2 at each iterate.

    Returns:
        (solution vector, Trace)
    """
    if g2.grad is None:
        raise ValueError("g2 needs a gradient")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    d = x0.size

    def smooth(x):
        return g1(x[0]) - g2(x[0])

    grad = None
    if g1.grad is not None:

        def grad(x, i):
            return np.asarray(g1.grad(x[0]), dtype=float) - np.asarray(g2.grad(x[0]), dtype=float)

    problem = Problem(dims=(d,), smooth=smooth, smooth_grad=grad, name="dc")

    def value(i, x, z):
        c = np.asarray(g2.grad(z[0]), dtype=float)
        return g1(x) - g2(z[0]) - float(c @ (x - z[0]))

    def minimizer(i, z):
        return _cccp_step(g1, np.asarray(g2.grad(z[0]), dtype=float), z[0])

    surrogate = Surrogate.custom(value, minimizer, name="cccp")
    x, trace = run_bsum(problem, surrogate, SelectionRule.cyclic(1), stop, BlockVector((x0,)))
    if trace.terminal_status == "diverged":
        raise UnboundedSubproblemError("; ".join(trace.notes) or "CCCP iterates diverged")
    return x[0].copy(), trace


# ---------------------------------------------------------------------------
# EM for abundance estimation


@define(frozen=True, eq=False)
class AbundanceModel:
    alpha: np.ndarray
    rho: np.ndarray

    @property
    def log_likelihood(self):
        return float(np.sum(np.log(self.alpha @ self.rho)))


def abundance_nll(alpha, rho):
    """Mean negative log-likelihood -1/N sum_n log(sum_m alpha_nm rho_m)."""
    with np.errstate(divide="ignore"):
        return -float(np.mean(np.log(alpha @ rho)))


def em_update(alpha, rho, n_partitions=1):
    """rho_m <- 1/N sum_n alpha_nm rho_m / sum_m' alpha_nm' rho_m', summed over row partitions."""
    N = alpha.shape[0]
    total = np.zeros_like(rho)
    for part in np.array_split(np.arange(N), n_partitions):
        if part.size == 0:
            continue
        a = alpha[part]
        total += (a / (a @ rho)[:, None]).sum(axis=0)
    return rho * total / N


def make_em_problem(alpha, n_partitions=1):
    """Negative mean log-likelihood over the simplex with the Jensen bound built
    from the posterior responsibilities at z as its surrogate.

    Returns:
        (Problem, Surrogate)
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 2:
        raise ValueError("alpha must be an N x M matrix")
    if np.any(alpha < 0):
        raise ValueError("alpha must be entrywise nonnegative")
    empty = np.nonzero(~np.any(alpha > 0, axis=1))[0]
    if empty.size:
        raise ValueError(f"Read {int(empty[0])} is compatible with no component (all-zero row)")
    if n_partitions < 1:
        raise ValueError("n_partitions must be at least 1")
    N, M = alpha.shape

    def smooth(x):
        return abundance_nll(alpha, x[0])

    def grad(x, i):
        return -(alpha / (alpha @ x[0])[:, None]).mean(axis=0)

    problem = Problem(
        dims=(M,),
        sets=(FeasibleSet.simplex(M),),
        smooth=smooth,
        smooth_grad=grad,
        name="em_abundance",
        convex=True,
    )

    def value(i, x, z):
        r = z[0]
        w = alpha * r / (alpha @ r)[:, None]
        mask = w > 0
        with np.errstate(divide="ignore"):
            terms = np.where(mask, w * np.log(np.where(mask, alpha * x / np.where(mask, w, 1.0), 1.0)), 0.0)
        return -float(terms.sum()) / N

    def minimizer(i, z):
        return em_update(alpha, z[0], n_partitions)

    return problem, Surrogate.custom(value, minimizer, name="em_jensen")


def em_abundance(alpha, rho0=None, stop=None, n_partitions=1):
    """Maximum-likelihood abundances by EM, each step minimizing the Jensen bound
    of the negative log-likelihood over the simplex.

    Unless `stop` sets its own step_tol, the run also stops once the l1 step
    falls below 1e-12, where EM sits at its fixed point.

    Returns:
        (AbundanceModel, Trace)
    """
    problem, surrogate = make_em_problem(alpha, n_partitions)
    M = problem.dims[0]
    rho0 = np.full(M, 1.0 / M) if rho0 is None else np.asarray(rho0, dtype=float).reshape(-1)
    if rho0.size != M or np.any(rho0 <= 0) or abs(rho0.sum() - 1.0) > 1e-12:
        raise ValueError("rho0 must be strictly positive and sum to 1")
    stop = StopCriteria() if stop is None else stop
    if stop.step_tol is None:
        stop = evolve(stop, step_tol=EM_STEP_TOL, step_ord=1)
    x, trace = run_bsum(problem, surrogate, SelectionRule.cyclic(1), stop, BlockVector((rho0,)))
    return AbundanceModel(alpha=np.asarray(alpha, dtype=float), rho=x[0].copy()), trace


# ---------------------------------------------------------------------------
# WMMSE beamforming


@define(frozen=True, eq=False)
class Beamformers:
    u: np.ndarray
    v: np.ndarray
    rates: np.ndarray
    powers: np.ndarray

    @property
    def sum_rate(self):
        return float(np.sum(self.rates))


def _channels(H):
    H = np.asarray(H, dtype=complex)
    if H.ndim != 4 or H.shape[0] != H.shape[1]:
        raise ValueError("H must have shape (K, K, N, M)")
    return H


def mse_values(H, sigma2, u, v):
    """e_k = |u_k^H H_kk v_k - 1|^2 + sum_{j != k} |u_k^H H_kj v_j|^2 + sigma2 |u_k|^2."""
    K = H.shape[0]
    e = np.empty(K)
    for k in range(K):
        gains = np.array([np.vdot(u[k], H[k, j] @ v[j]) for j in range(K)])
        e[k] = (
            abs(gains[k] - 1.0) ** 2
            + float(np.sum(np.abs(np.delete(gains, k)) ** 2))
            + sigma2 * float(np.real(np.vdot(u[k], u[k])))
        )
    return e


def sinr_rates(H, sigma2, v):
    """Achievable rates log(1 + SINR_k) with MMSE receivers."""
    K, _, N, _ = H.shape
    rates = np.empty(K)
    for k in range(K):
        C = sigma2 * np.eye(N, dtype=complex)
        for j in range(K):
            if j != k:
                hv = H[k, j] @ v[j]
                C += np.outer(hv, hv.conj())
        s = H[k, k] @ v[k]
        rates[k] = np.log1p(float(np.real(np.vdot(s, linalg.solve(C, s, assume_a="her")))))
    return rates


def _mmse_receiver(H, sigma2, v, k):
    K, _, N, _ = H.shape
    C = sigma2 * np.eye(N, dtype=complex)
    for j in range(K):
        hv = H[k, j] @ v[j]
        C += np.outer(hv, hv.conj())
    return linalg.solve(C, H[k, k] @ v[k], assume_a="her")


def power_bisection(Q, c, P, user=0, tol=1e-13, max_mu=1e20):
    """Solve min v^H Q v - 2 Re(c^H v) s.t. |v|^2 <= P via the multiplier of the
    power constraint.

    Returns the v at the upper end of the final bracket, so |v|^2 <= P.
    """
    d, U = np.linalg.eigh(Q)
    d = np.maximum(d, 0.0)
    cc = U.conj().T @ c
    mag = np.abs(cc) ** 2

    def power(mu):
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(mag > 0, mag / (d + mu) ** 2, 0.0)
        return float(np.sum(ratio))

    def beam(mu):
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(mag > 0, cc / (d + mu), 0.0)
        return U @ coef

    if not np.any(mag > 0):
        return np.zeros_like(c)
    if np.all(d[mag > 0] > 0) and power(0.0) <= P:
        return beam(0.0)
    lo, hi = 0.0, 1.0
    while power(hi) > P:
        hi *= 2.0
        if hi > max_mu:
            raise BisectionError(
                "Could not bracket the power multiplier",
                {"user": user, "mu_max": hi, "power": power(hi), "budget": P},
            )
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        p_mid = power(mid)
        if p_mid > P:
            lo = mid
        else:
            hi = mid
            if P - p_mid <= tol * max(1.0, P):
                break
        if hi - lo <= 1e-16 * max(1.0, hi):
            break
    return beam(hi)


def _wmmse_budgets(K, P, sigma2):
    P = np.broadcast_to(np.asarray(P, dtype=float), (K,)).copy()
    if np.any(P <= 0) or sigma2 <= 0:
        raise ValueError("Power budgets and noise power must be positive")
    return P


def make_wmmse_problem(H, P, sigma2=1.0):
    """sum_k log e_k over receivers u_1..u_K then power-limited transmitters
    v_1..v_K, with the tangent bound of log at the current MSEs as surrogate.

    Returns:
        (Problem, Surrogate)
    """
    H = _channels(H)
    K, _, N, M = H.shape
    P = _wmmse_budgets(K, P, sigma2)
    sets = tuple(FeasibleSet.unconstrained(N) for _ in range(K)) + tuple(
        FeasibleSet.ball(np.sqrt(Pk), M) for Pk in P
    )

    def split(x):
        return [x[k] for k in range(K)], [x[K + k] for k in range(K)]

    def objective(x):
        u, v = split(x)
        return float(np.sum(np.log(mse_values(H, sigma2, u, v))))

    problem = Problem(dims=(N,) * K + (M,) * K, sets=sets, objective=objective, name="wmmse")

    def value(i, x, z):
        u, v = split(z)
        e_hat = mse_values(H, sigma2, u, v)
        u, v = split(z.replace_block(i, x))
        e = mse_values(H, sigma2, u, v)
        return float(np.sum(np.log(e_hat) + (e - e_hat) / e_hat))

    def minimizer(i, z):
        u, v = split(z)
        if i < K:
            return _mmse_receiver(H, sigma2, v, i)
        k = i - K
        w = 1.0 / mse_values(H, sigma2, u, v)
        Q = np.zeros((M, M), dtype=complex)
        for j in range(K):
            g = H[j, k].conj().T @ u[j]
            Q += w[j] * np.outer(g, g.conj())
        c = w[k] * (H[k, k].conj().T @ u[k])
        return power_bisection(Q, c, P[k], user=k)

    return problem, Surrogate.custom(value, minimizer, name="wmmse")


def wmmse_design(H, P, sigma2=1.0, v0=None, stop=None, seed=0, n_workers=1):
    """Sum-rate beamforming for the K-user interference channel by WMMSE.

    Blocks are u_1..u_K (receivers) then v_1..v_K (transmitters); the schedule
    updates all receivers, then all transmitters. The objective is
    sum_k log e_k, whose decrease is a sum-rate increase.

    Args:
        H: channels, H[k, j] is the N x M matrix from transmitter j to receiver k
        P: power budget, scalar or one per user
        sigma2: noise power
        v0: initial transmit beams (K x M), default seeded random at full power

    Returns:
        (Beamformers, Trace)
    """
    problem, surrogate = make_wmmse_problem(H, P, sigma2)
    H = _channels(H)
    K, _, N, M = H.shape
    P = _wmmse_budgets(K, P, sigma2)
    if v0 is None:
        rng = np.random.default_rng(seed)
        v0 = rng.standard_normal((K, M)) + 1j * rng.standard_normal((K, M))
        v0 = v0 * (np.sqrt(P) / np.linalg.norm(v0, axis=1))[:, None]
    v0 = np.asarray(v0, dtype=complex).reshape(K, M)
    rule = SelectionRule.essentially_cyclic(2 * K, schedule=[list(range(K)), list(range(K, 2 * K))])
    x0 = BlockVector(tuple(np.zeros(N, dtype=complex) for _ in range(K)) + tuple(v0))
    x, trace = run_bsum(problem, surrogate, rule, stop, x0, n_workers=n_workers)
    u, v = [x[k] for k in range(K)], [x[K + k] for k in range(K)]
    v = np.array(v)
    return (
        Beamformers(
            u=np.array(u),
            v=v,
            rates=sinr_rates(H, sigma2, v),
            powers=np.sum(np.abs(v) ** 2, axis=1),
        ),
        trace,
    )
