"""Exception hierarchy shared by all modules."""


class GrushinError(Exception):
    """Base class for every error raised by grushin_lab."""


class InvalidInput(GrushinError, ValueError):
    pass


class SingularChart(GrushinError, ValueError):
    """Raised when an operation needs |x| > 0 and the point is on (or too near) x = 0."""


class DimensionMismatch(GrushinError, ValueError):
    pass


class DimensionTooSmall(GrushinError, ValueError):
    pass


class SingularMetric(GrushinError, ValueError):
    pass


class DegenerateInput(GrushinError, ValueError):
    pass


class StepTooLarge(GrushinError, ValueError):
    pass


class NonpositiveFactor(GrushinError, ValueError):
    pass


class DomainViolation(GrushinError, ValueError):
    pass


class FitFailed(GrushinError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateGradient(GrushinError, ValueError):
    pass


class ClassificationFailed(GrushinError, RuntimeError):
    pass


class PreconditionViolation(GrushinError, ValueError):
    pass


class LeftRiemannianRegion(GrushinError, RuntimeError):
    pass


class ConfigError(GrushinError, ValueError):
    pass
