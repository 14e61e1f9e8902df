"""Exception hierarchy shared by all skeff modules."""


class SkeffError(Exception):
    """Base class for every error raised by skeff."""


class DomainError(SkeffError, ValueError):
    """An input violates a mathematical precondition (non-Hermitian, non-unit, ...)."""


class UnsupportedFlowError(SkeffError, TypeError):
    """The requested operation is not defined for this kind of flow."""


class FlowUndefinedError(SkeffError, ValueError):
    """A cyclic-list flow was evaluated off its stored orbit."""


class RecurrenceNotFound(SkeffError):
    """No return within ``epsilon`` was found in ``n_max`` iterations."""

    def __init__(self, epsilon, n_max, min_distance, argmin):
        self.epsilon = epsilon
        self.n_max = n_max
        self.min_distance = min_distance
        self.argmin = argmin
        super().__init__(
            f"no recurrence within eps={epsilon:g} after {n_max} steps "
            f"(closest approach {min_distance:.3e} at n={argmin})"
        )


class ConvergenceError(SkeffError, ArithmeticError):
    """An iterative eigensolver hit its iteration limit."""


class PoleError(SkeffError, ArithmeticError):
    """f(x) = x / (1 - exp(-x)) evaluated at (or too close to) one of its poles."""


class ResonanceError(PoleError):
    """An eigenvalue difference of ad_X falls on a pole of f."""

    def __init__(self, message, pair=None, value=None):
        self.pair = pair
        self.value = value
        super().__init__(message)


class CapacityError(SkeffError, MemoryError):
    """A dense construction would exceed the configured size limit."""


class DegeneracyError(SkeffError, ArithmeticError):
    """Spectral filtering cannot separate two quasienergy families."""


class ConfigError(SkeffError, ValueError):
    """Invalid experiment configuration."""
