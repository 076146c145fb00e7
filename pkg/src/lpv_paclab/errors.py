"""Exception hierarchy shared by the library and the command line tool."""


class LpvError(Exception):
    """Base class for all library errors."""


class ConfigError(LpvError, ValueError):
    """Invalid configuration, arguments or dimensions."""


class DatasetFormatError(ConfigError):
    """A dataset file could not be parsed."""


class NumericalError(LpvError, ArithmeticError):
    """A numerical procedure failed (singular operator, rank deficiency, ...)."""


class BudgetError(LpvError, RuntimeError):
    """A computation would exceed its configured resource budget."""
