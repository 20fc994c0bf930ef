"""Exception hierarchy shared across the package."""


class MtsurvError(Exception):
    """Base class for all package-specific errors."""


class DomainError(MtsurvError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ContractError(MtsurvError, ValueError):
    """A required argument is missing or inconsistent with the model."""


class DataError(MtsurvError, ValueError):
    """Input data violates a schema or invariant; message carries row context."""


class ConfigError(MtsurvError, ValueError):
    """A configuration file is malformed or references unknown entities."""


class ConvergenceError(MtsurvError, RuntimeError):
    """An iterative procedure failed to converge."""


class SingularInformationError(ConvergenceError):
    """The observed information matrix cannot be inverted."""
