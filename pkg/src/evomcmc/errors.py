"""Exception types raised across the package."""


class InvalidArgument(ValueError):
    """A precondition on an argument was violated."""


class BudgetExceeded(InvalidArgument):
    """An exact enumeration would exceed its configured state budget."""


class UnsupportedKernel(InvalidArgument):
    """The requested kernel cannot be handled by this operation."""


class BracketError(RuntimeError):
    """A monotone root bracket did not contain a sign change."""


class ConvergenceError(RuntimeError):
    """An iterative method ran out of iterations."""


class NonUniqueMinimizer(InvalidArgument):
    """A limit prediction needs a unique minimiser of the fitness table."""


class ConfigError(InvalidArgument):
    """An experiment configuration failed validation."""
