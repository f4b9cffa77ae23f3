"""Exception hierarchy shared by all trialadapt modules."""


class TrialAdaptError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(TrialAdaptError, ValueError):
    pass


class IntegrityError(TrialAdaptError):
    """Participant collection violates an identity constraint (e.g. duplicate ids)."""


class NotFoundError(TrialAdaptError, KeyError):
    pass


class InsufficientDataError(TrialAdaptError):
    """A sub-group is too small for the requested inference."""

    def __init__(self, message, subgroup=None):
        super().__init__(message)
        self.subgroup = subgroup


class SingularStatisticError(TrialAdaptError):
    """The collapsed statistic c(x) is not strictly positive."""


class NoEvidenceError(TrialAdaptError):
    """No matched pair carries enough data to infer anything."""


class AdaptationExhausted(TrialAdaptError):
    """No participant can be removed without breaking the size floor."""


class AccuracyError(TrialAdaptError):
    """Numerical integration failed to reach the requested tolerance."""


class ConfigError(TrialAdaptError, ValueError):
    """Experiment configuration is invalid; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class AccuracyWarning(UserWarning):
    pass
