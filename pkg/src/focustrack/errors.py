"""Error taxonomy shared across the package."""


class FocusTrackError(Exception):
    """Base class for all package-specific failures."""


class ShapeError(FocusTrackError, ValueError):
    """Tensor/feature-map dimensions do not match an operation's contract."""


class ConfigError(FocusTrackError, ValueError):
    """Inconsistent or out-of-range configuration."""


class NumericError(FocusTrackError, ArithmeticError):
    """NaN/Inf or other numeric breakdown inside a kernel or a loss."""


class FormatError(FocusTrackError, ValueError):
    """Malformed file on disk (weights container, sequence directory, ...)."""


class SamplingError(FocusTrackError, ValueError):
    """Pair sampler cannot satisfy the requested draw."""


class MetricError(FocusTrackError, ValueError):
    """Metric undefined for the given inputs (e.g. no evaluable frames)."""


class DivergenceError(FocusTrackError, ArithmeticError):
    """Training aborted on a non-finite loss; carries the failing step index."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")
