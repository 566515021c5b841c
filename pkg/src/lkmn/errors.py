"""Exception hierarchy shared by every lkmn module."""


class LKMNError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(LKMNError, ValueError):
    """An invalid hyperparameter or configuration value."""


class DimensionError(LKMNError, ValueError):
    """Tensor shapes that do not fit the operation."""


class ContractError(LKMNError, RuntimeError):
    """An API used outside of its contract (e.g. backward on a non-scalar)."""


class IntegrityError(LKMNError):
    """Corrupt or truncated data on disk."""


class CompatibilityError(LKMNError):
    """Well-formed data that does not match the expected model/version."""


class FormatError(LKMNError):
    """Unsupported file format variant (e.g. 16-bit PNG)."""


class TrainingDiverged(LKMNError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, message: str, iteration: int, last_checkpoint=None):
        super().__init__(message)
        self.iteration = iteration
        self.last_checkpoint = last_checkpoint
