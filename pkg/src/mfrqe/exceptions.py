"""Exception hierarchy shared by all modules."""


class MFRQEError(Exception):
    """Base class for package errors."""


class ContractViolation(MFRQEError, ValueError):
    """Caller passed arguments that break an operation's preconditions."""


class ModelError(MFRQEError):
    """A game evaluator produced an invalid transition or reward."""


class DomainError(MFRQEError, ValueError):
    """A point lies outside the domain of a regularizer."""


class ConvergenceError(MFRQEError, RuntimeError):
    """An iterative solver ran out of iterations before reaching tolerance."""

    def __init__(self, message, residual=None, location=None):
        super().__init__(message)
        self.residual = residual
        self.location = location


class ConfigError(MFRQEError, ValueError):
    """Invalid user configuration (CLI flags, config files, inline tables)."""


class UsageError(ConfigError):
    """Unknown preset name or similar user-facing selection error."""
