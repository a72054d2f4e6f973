"""Exception types raised across the package."""


class MMRMSimError(Exception):
    """Base class for all package errors."""


# -- data model ---------------------------------------------------------------

class TrialDataError(MMRMSimError, ValueError):
    """A trial dataset failed validation."""


class NonMonotoneMissingness(TrialDataError):
    pass


class InconsistentBaseline(TrialDataError):
    pass


class EmptyArm(TrialDataError):
    pass


# -- simulation ---------------------------------------------------------------

class ConfigError(MMRMSimError, ValueError):
    """Invalid scenario configuration. ``field`` names the offending entry."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class InvalidCorrelation(ConfigError):
    def __init__(self, message, field="rho"):
        super().__init__(field, message)


class InvalidHazard(ConfigError):
    def __init__(self, message, field="delta"):
        super().__init__(field, message)


# -- estimation ---------------------------------------------------------------

class EstimationError(MMRMSimError, ArithmeticError):
    """A model could not be fitted to the data."""


class SingularNormalEquations(EstimationError):
    pass


class EmptyOverlap(EstimationError):
    pass


class NonPositiveDefinite(EstimationError):
    pass


class SingularInformation(EstimationError):
    pass


class InsufficientData(EstimationError):
    pass


class InvalidSe(MMRMSimError, ValueError):
    pass


class NotConverged(UserWarning):
    """The alternating solver hit ``max_iter``; the result is flagged, not discarded."""
