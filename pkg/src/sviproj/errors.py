"""Exception hierarchy shared by all modules."""


class SviError(Exception):
    """Base class for library errors."""


class LayoutError(SviError, ValueError):
    """Block layouts of combined vectors do not match."""


class UsageError(SviError, ValueError):
    """A precondition of an operation is violated by the caller."""


class ConfigurationError(SviError, ValueError):
    """A schedule, config file or parameter set is invalid."""


class DataError(SviError, ValueError):
    """Input data cannot be used (e.g. nonpositive values in a log fit)."""


class CapabilityError(SviError, NotImplementedError):
    """The requested operator or set class is not supported."""


class GenerationError(SviError, RuntimeError):
    """A random problem generator gave up after its retry budget."""


class InternalError(SviError, RuntimeError):
    """An invariant that valid inputs guarantee has been broken."""


class ConvergenceError(SviError, RuntimeError):
    """An iterative routine hit its iteration cap.

    Attributes
    ----------
    best : ndarray or None
        Last iterate reached.
    residual : float
        Stopping quantity at ``best``.
    """

    def __init__(self, message, best=None, residual=float("nan")):
        super().__init__(message)
        self.best = best
        self.residual = residual


class DivergenceError(SviError, RuntimeError):
    """An iterate became non-finite.

    Attributes
    ----------
    iteration : int
        Index k of the first non-finite iterate x^k.
    partial : object or None
        Partially filled run record, when available.
    """

    def __init__(self, message, iteration, partial=None):
        super().__init__(message)
        self.iteration = iteration
        self.partial = partial
