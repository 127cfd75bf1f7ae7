"""Exception hierarchy shared across the package."""


class FaceBMIError(Exception):
    """Base class for all package errors."""


class DomainError(FaceBMIError, ValueError):
    pass


class ManifestError(FaceBMIError):
    pass


class ProtocolError(FaceBMIError, ValueError):
    pass


class ImageReadError(FaceBMIError):
    """An image could not be read or decoded (distinct from a detection failure)."""


class DegenerateCropError(FaceBMIError, ValueError):
    pass


class WeightsError(FaceBMIError):
    pass


class ShapeError(FaceBMIError, ValueError):
    pass


class RankDeficientError(FaceBMIError, ValueError):
    pass


class ConvergenceError(FaceBMIError):
    def __init__(self, message: str, gap: float, iterations: int):
        super().__init__(f"{message} (last gap {gap:.3g} after {iterations} iterations)")
        self.gap = gap
        self.iterations = iterations


class ModelFormatError(FaceBMIError):
    pass


class ConfigError(FaceBMIError, ValueError):
    pass


class StageError(FaceBMIError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
