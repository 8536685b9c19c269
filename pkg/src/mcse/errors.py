"""Exception types shared across the toolkit."""


class McseError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(McseError, ValueError):
    """An argument violates an operation's precondition."""


class ConfigurationError(McseError, ValueError):
    """A scene or pipeline configuration is incomplete or inconsistent."""


class FormatError(McseError, ValueError):
    """A file does not follow the expected binary or audio layout."""


class NumericalError(McseError, ArithmeticError):
    """A linear-algebra step failed even after regularization."""
