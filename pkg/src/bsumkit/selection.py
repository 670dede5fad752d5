import logging

import numpy as np
from attrs import define

# Set a basic logging level
logging.basicConfig(level=logging.INFO)

# Logging for this package
logger = logging.getLogger(__name__)

# Set logging level for this package
logger.setLevel(logging.DEBUG)

RULE_KINDS = (
    "cyclic",
    "essentially_cyclic",
    "gauss_southwell",
    "mbi",
    "randomized",
    "all_blocks",
)


@define(frozen=True, eq=False)
class Candidates:
    """Per-block candidate updates at the current iterate, as needed by G-So and MBI."""

    updates: tuple = ()
    step_norms: tuple = ()
    objectives: tuple = ()


def _check_probabilities(p, n):
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.size != n:
        raise ValueError(f"Selection probabilities have length {p.size}, expected {n}")
    if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("Selection probabilities must be positive and sum to 1")
    return p


class SelectionRule:
    """Chooses the block index set I^r updated at iteration r.

    Indices are 0-based. A rule holds mutable state (random stream,
    last probabilities) and belongs to one run at a time; `reset()` restores
    its initial state.
    """

    def __init__(self, kind, n, schedule=None, q=1.0, p=None, seed=0, p_callback=None):
        if kind not in RULE_KINDS:
            raise ValueError(f"Unknown selection rule {kind!r}; valid rules: {', '.join(RULE_KINDS)}")
        if n < 1:
            raise ValueError("A selection rule needs at least one block")
        self.kind = kind
        self.n = int(n)
        self.q = float(q)
        self.seed = seed
        self.p_callback = p_callback
        if kind == "gauss_southwell" and not 0 < self.q <= 1:
            raise ValueError("Gauss-Southwell q must lie in (0, 1]")
        self.p = None
        if kind == "randomized":
            self.p = _check_probabilities(np.full(self.n, 1.0 / self.n) if p is None else p, self.n)
        self.schedule = None
        if kind == "essentially_cyclic":
            if schedule is None:
                perm = np.random.default_rng(seed).permutation(self.n)
                schedule = [int(k) for k in perm]
            self.schedule = tuple(self._as_group(entry) for entry in schedule)
            covered = set().union(*self.schedule)
            missing = sorted(set(range(self.n)) - covered)
            if missing:
                raise ValueError(f"Essentially cyclic schedule never visits blocks {missing}")
        self.reset()

    def _as_group(self, entry):
        group = tuple(int(k) for k in np.atleast_1d(entry))
        if not group or any(k < 0 or k >= self.n for k in group):
            raise ValueError(f"Schedule entry {entry!r} is not a valid block group")
        return group

    @classmethod
    def cyclic(cls, n):
        return cls("cyclic", n)

    @classmethod
    def essentially_cyclic(cls, n, schedule=None, seed=0):
        return cls("essentially_cyclic", n, schedule=schedule, seed=seed)

    @classmethod
    def gauss_southwell(cls, n, q=1.0):
        return cls("gauss_southwell", n, q=q)

    @classmethod
    def mbi(cls, n):
        return cls("mbi", n)

    @classmethod
    def randomized(cls, n, p=None, seed=0, p_callback=None):
        return cls("randomized", n, p=p, seed=seed, p_callback=p_callback)

    @classmethod
    def all_blocks(cls, n):
        return cls("all_blocks", n)

    @property
    def needs_candidates(self):
        return self.kind in ("gauss_southwell", "mbi")

    @property
    def period(self):
        """Iterations after which every block has been visited (None for randomized)."""
        if self.kind == "all_blocks":
            return 1
        if self.kind == "essentially_cyclic":
            return len(self.schedule)
        if self.kind == "randomized":
            return None
        return self.n

    @property
    def label(self):
        if self.kind == "gauss_southwell":
            return f"gauss_southwell(q={self.q:g})"
        return self.kind

    def reset(self):
        self.rng = np.random.default_rng(self.seed)
        self.last = None

    def select(self, r, candidates=None):
        if self.kind == "cyclic":
            chosen = (r % self.n,)
        elif self.kind == "all_blocks":
            chosen = tuple(range(self.n))
        elif self.kind == "essentially_cyclic":
            chosen = self.schedule[r % len(self.schedule)]
        elif self.kind == "randomized":
            p = self.p if self.p_callback is None else _check_probabilities(self.p_callback(r, self.last), self.n)
            chosen = (int(self.rng.choice(self.n, p=p)),)
        elif self.kind == "gauss_southwell":
            if candidates is None or len(candidates.step_norms) != self.n:
                raise ValueError("Gauss-Southwell selection needs step norms for every block")
            norms = np.asarray(candidates.step_norms, dtype=float)
            chosen = (int(np.nonzero(norms >= self.q * norms.max())[0][0]),)
        else:
            if candidates is None or len(candidates.objectives) != self.n:
                raise ValueError("MBI selection needs candidate objectives for every block")
            chosen = (int(np.argmin(np.asarray(candidates.objectives, dtype=float))),)
        self.last = chosen
        return chosen


def select_blocks(rule, r, candidates=None):
    return rule.select(r, candidates)
