"""Exception hierarchy shared by every module."""


class LerpError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(LerpError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(LerpError, ValueError):
    """A hyperparameter or setting is out of its valid range."""


class DataError(LerpError, ValueError):
    """Input records or tokens are invalid."""


class ParseError(DataError):
    """A file could not be parsed."""


class ContractError(LerpError, RuntimeError):
    """A function was called in a state its contract forbids."""


class UndefinedMetricError(LerpError, ValueError):
    """A metric has no defined value for the given targets."""


class NumericalError(LerpError, FloatingPointError):
    """A loss or gradient became NaN or infinite."""
