"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where an operation is defined."""


class DivergedPathError(ArithmeticError):
    """A simulated path reached a non-finite state.

    Attributes
    ----------
    step : int
        Index of the first grid step whose output was non-finite.
    """

    def __init__(self, step, message=None):
        self.step = int(step)
        super().__init__(message or f"path diverged at step {self.step}")


class FactorizationError(ArithmeticError):
    """A covariance matrix could not be factorized without reconditioning."""

    def __init__(self, message, jitter=None):
        self.jitter = jitter
        super().__init__(message)


class RunFailure(RuntimeError):
    """A Monte Carlo run failed a health check (e.g. too many diverged paths)."""


class CflViolation(DomainError):
    """An explicit lattice scheme was configured outside its stability region."""


class DivergedFieldError(DivergedPathError):
    """A lattice field became non-finite at time row ``step`` and node ``node``."""

    def __init__(self, step, node, message=None):
        self.node = int(node)
        super().__init__(step, message or f"field diverged at time row {int(step)}, node {self.node}")
