"""Exception hierarchy shared by every module."""


class DmcError(Exception):
    """Base class; carries a short machine-readable ``kind`` for the CLI."""

    kind = "error"


class ParameterError(DmcError, ValueError):
    kind = "parameter"


class ValidationError(DmcError, ValueError):
    kind = "validation"


class DomainError(DmcError, ValueError):
    kind = "domain"


class PreconditionError(DmcError, ValueError):
    kind = "precondition"


class ConfigurationError(DmcError, ValueError):
    kind = "configuration"


class UnsupportedError(DmcError):
    kind = "unsupported"


class UnavailableError(DmcError):
    kind = "unavailable"


class ConvergenceError(DmcError, RuntimeError):
    kind = "convergence"

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class BudgetError(DmcError):
    kind = "budget"
