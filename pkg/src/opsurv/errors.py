"""Exception hierarchy shared by every opsurv module."""


class OPSurvError(Exception):
    """Base class for all errors raised by opsurv."""


class DegreeOutOfRangeError(OPSurvError, ValueError):
    pass


class QuadratureError(OPSurvError, RuntimeError):
    pass


class DomainError(OPSurvError, ValueError):
    """A time argument falls outside the domain of an operation."""


class ShapeError(OPSurvError, ValueError):
    pass


class DegenerateDensityError(OPSurvError, ValueError):
    """A coefficient row is (numerically) all zeros."""


class HazardUndefinedError(OPSurvError, ValueError):
    pass


class NaNGradientError(OPSurvError, FloatingPointError):
    def __init__(self, layer: str):
        super().__init__(f"non-finite gradient detected in layer {layer!r}")
        self.layer = layer


class MetricUndefinedError(OPSurvError, ValueError):
    pass


class DataError(OPSurvError, ValueError):
    """Malformed, empty or inconsistent input data."""


class ConfigError(OPSurvError, ValueError):
    pass
