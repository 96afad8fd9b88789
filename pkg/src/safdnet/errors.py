"""Exception hierarchy.

The CLI maps :class:`DataError` to exit code 2 and :class:`NumericalError`
to exit code 3.
"""


class SafdError(Exception):
    pass


class DataError(SafdError):
    """Bad or missing input data."""


class NumericalError(SafdError):
    """Non-finite values or failed numerical procedures."""


class InvalidLengthError(DataError, ValueError):
    pass


class ShapeError(DataError, ValueError):
    pass


class FormatError(DataError):
    pass


class MissingChannelError(DataError):
    def __init__(self, channel: str, where: str = ""):
        self.channel = channel
        msg = f"missing channel {channel!r}"
        super().__init__(f"{msg} in {where}" if where else msg)


class UpsamplingError(DataError, ValueError):
    pass


class InsufficientBeatsError(DataError):
    pass


class ScheduleError(DataError):
    pass


class UndefinedMetricError(DataError, ValueError):
    pass


class CorruptCheckpointError(DataError):
    pass


class SplitLeakageError(DataError):
    pass


class UnsupportedModelError(SafdError):
    pass


class GradCheckError(NumericalError):
    pass


class FitError(NumericalError):
    pass


class NoMaskError(UnsupportedModelError):
    pass


class TooFewSamplesError(DataError, ValueError):
    pass
