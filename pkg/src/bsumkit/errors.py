"""Exceptions raised by bsumkit."""


class BsumError(Exception):
    """Base class for bsumkit errors."""


class DimensionMismatchError(BsumError, ValueError):
    def __init__(self, block, expected, got, what="block"):
        self.block = block
        self.expected = expected
        self.got = got
        super().__init__(
            f"Dimension mismatch in {what} {block}: expected {expected}, got {got}"
        )


class UnsupportedOperationError(BsumError, NotImplementedError):
    pass


class InfeasibleError(BsumError, ValueError):
    pass


class BudgetExceededError(BsumError, RuntimeError):
    """Inner solver ran out of iterations; `best` holds the best iterate seen."""

    def __init__(self, message, best=None, iterations=None):
        self.best = best
        self.iterations = iterations
        super().__init__(message)


class CouplingError(BsumError, ValueError):
    pass


class DegenerateInstanceError(BsumError, ValueError):
    pass


class UnboundedSubproblemError(BsumError, RuntimeError):
    pass


class BisectionError(BsumError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(f"{message} {self.diagnostics}" if diagnostics else message)


class ConfigError(BsumError, ValueError):
    pass
