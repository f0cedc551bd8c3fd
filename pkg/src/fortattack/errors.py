"""Exception types shared across the package."""


class FortAttackError(Exception):
    """Base class for all package errors."""


class ConfigError(FortAttackError, ValueError):
    """A configuration value is invalid or inconsistent."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}" if field else message)


class DimensionError(FortAttackError, ValueError):
    """Input shapes do not line up."""


class ContractError(FortAttackError, ValueError):
    """A caller broke an operation's precondition."""


class UsageError(FortAttackError, RuntimeError):
    """An API was used in an unsupported way (e.g. backward on a foreign tape)."""


class EmptySupportError(FortAttackError, ValueError):
    """A normalization was requested over an empty set."""


class NonFiniteError(FortAttackError, FloatingPointError):
    """A computation produced NaN or Inf."""


class PoisonedUpdateError(NonFiniteError):
    """An optimizer step was refused because its gradient was not finite."""


class ReplayMismatchError(FortAttackError):
    """Replaying a recorded trajectory did not reproduce it."""


class TrajectoryFormatError(FortAttackError, ValueError):
    """A trajectory file could not be parsed."""
