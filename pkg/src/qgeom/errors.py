"""Exception hierarchy shared across the package."""


class QGeomError(Exception):
    """Base class for all package errors."""


class ValidationError(QGeomError, ValueError):
    """Bad input: wrong shapes, invalid labels, nonpositive scales, ..."""


class NumericalError(QGeomError, RuntimeError):
    """A computation could not be completed reliably."""


class SingularMetricError(NumericalError):
    def __init__(self, message: str, lambda_min: float = float("nan"), time: float | None = None):
        super().__init__(message)
        self.lambda_min = lambda_min
        self.time = time


class TrainingError(NumericalError):
    """Training diverged (non-finite loss) or failed to reach its target."""

    def __init__(self, message: str, step: int | None = None, final_loss: float | None = None):
        super().__init__(message)
        self.step = step
        self.final_loss = final_loss
