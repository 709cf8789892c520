"""Exception hierarchy shared by all crosslight modules."""

from __future__ import annotations


class CrosslightError(Exception):
    """Base class for every error raised by the package."""


class PreconditionError(CrosslightError, ValueError):
    """An operation was called with arguments outside its domain."""


class ConfigError(CrosslightError, ValueError):
    """Invalid scenario configuration. ``path`` names the offending key."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class NumericFault(CrosslightError, ArithmeticError):
    """A non-finite value appeared during stepping."""

    def __init__(self, quantity: str, value):
        self.quantity = quantity
        self.value = value
        super().__init__(f"non-finite value in {quantity}: {value!r}")


class NotHurwitzError(ConfigError):
    """Observer closed-loop matrix has an eigenvalue with nonnegative real part."""


class DegenerateDataError(CrosslightError, ValueError):
    """Regression design matrix is rank deficient."""

    def __init__(self, message: str, columns: tuple[str, ...] = ()):
        self.columns = columns
        super().__init__(message)


class TrainingError(CrosslightError, ValueError):
    """Not enough benign data to train a detector."""


class DetectorStateError(CrosslightError, RuntimeError):
    """Detector used before it was trained or calibrated."""


class CalibrationError(CrosslightError, ValueError):
    """Noise calibration impossible (e.g. all-zero reference signal)."""


class SimulationAbort(CrosslightError, RuntimeError):
    """A scenario stopped early. Carries the step index and a state snapshot."""

    def __init__(self, step: int, snapshot: dict, cause: Exception):
        self.step = step
        self.snapshot = snapshot
        self.cause = cause
        super().__init__(f"scenario aborted at step {step}: {cause}")
