"""Exception and warning types shared across the package."""


class QdcombError(Exception):
    """Base class for all errors raised by qdcomb."""


class ValidationError(QdcombError, ValueError):
    """An argument or configuration value is outside its allowed domain."""


class InvalidModelError(ValidationError):
    pass


class InsufficientDataError(QdcombError):
    pass


class FitDegenerateError(QdcombError):
    pass


class NoCrossingError(QdcombError):
    pass


class ApproximationInvalidError(QdcombError):
    """The Gaussian-linewidth approximation is outside its validity range."""


class GridMismatchError(ValidationError):
    pass


class UnreliableEstimateError(QdcombError):
    pass


class LockFailureError(QdcombError):
    pass


class EqualizerSingularityError(QdcombError):
    pass


class AlignmentError(QdcombError):
    pass


class ConfigError(QdcombError):
    pass


class StageError(QdcombError):
    """A pipeline stage failed; carries the channel / sweep-point context."""

    def __init__(self, message, *, channel=None, sweep_value=None, stage=None):
        super().__init__(message)
        self.channel = channel
        self.sweep_value = sweep_value
        self.stage = stage

    def __reduce__(self):
        return (_rebuild_stage_error, (str(self), self.channel, self.sweep_value, self.stage))


def _rebuild_stage_error(message, channel, sweep_value, stage):
    return StageError(message, channel=channel, sweep_value=sweep_value, stage=stage)


class UnreliableEstimateWarning(UserWarning):
    pass
