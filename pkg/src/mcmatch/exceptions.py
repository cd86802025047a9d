"""Exception types raised across the package."""


class McMatchError(Exception):
    """Base class for package errors."""


class DomainError(McMatchError, ValueError):
    """Argument outside the mathematical domain of a model function."""


class DivergenceError(McMatchError, ArithmeticError):
    """A simulated trajectory produced non-finite values.

    Attributes
    ----------
    t : float
        Time at which the non-finite value appeared.
    x, u :
        State and input at the start of the failing step.
    """

    def __init__(self, message, t=None, x=None, u=None):
        super().__init__(message)
        self.t = t
        self.x = x
        self.u = u


class ConvergenceError(McMatchError, RuntimeError):
    """An iterative routine stopped before meeting its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InfeasibleError(McMatchError):
    """A problem has no feasible point."""

    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = tuple(rows)


class NotStabilizingError(InfeasibleError):
    """The feedback gain to be matched does not stabilize the model."""


class SimulationError(McMatchError, RuntimeError):
    """A controller raised during closed-loop simulation.

    ``sample`` is the sample index at which the controller failed.
    """

    def __init__(self, message, sample=None, t=None):
        super().__init__(message)
        self.sample = sample
        self.t = t
