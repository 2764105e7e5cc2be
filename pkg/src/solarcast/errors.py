"""Exception hierarchy shared by every module."""


class SolarcastError(Exception):
    """Base class for all errors raised by solarcast."""


class ShapeError(SolarcastError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(SolarcastError, ValueError):
    """A value lies outside the domain of a function (e.g. log of a non-positive)."""


class ContractError(SolarcastError, ValueError):
    """A precondition of an operation was violated."""


class DataError(SolarcastError, ValueError):
    """Input data is malformed, non-monotonic or otherwise unusable."""


class NotFoundError(SolarcastError, LookupError):
    """A requested record (customer, channel, ...) does not exist."""


class ConfigError(SolarcastError, ValueError):
    """A configuration value is invalid or inconsistent."""


class TrainingDivergence(SolarcastError, RuntimeError):
    """The optimisation produced non-finite losses."""
