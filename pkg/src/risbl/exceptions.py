"""Exception types shared across the package."""


class RisblError(Exception):
    """Base class for package errors."""


class ConfigError(RisblError):
    """Invalid scenario/sweep configuration or infeasible request."""


class SingularMatrixError(RisblError):
    """A matrix required to be positive definite is not."""


class DomainError(RisblError):
    """An input violates a mathematical precondition (e.g. nonpositive variance)."""


class SolverDivergenceError(RisblError):
    """A solver produced non-finite values. Carries the failing iteration index."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class UndefinedMetricError(RisblError):
    """A metric is undefined for the given inputs (e.g. zero reference)."""
