"""Exception types raised across vcsflow."""


class VcsFlowError(Exception):
    """Base class for all package errors."""


class MissingColumn(VcsFlowError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"missing column {column!r}")


class NonUniformSampling(VcsFlowError):
    def __init__(self, row, message=""):
        self.row = row
        super().__init__(message or f"non-uniform sampling at row {row}")


class NonFiniteValue(VcsFlowError):
    def __init__(self, column, row):
        self.column = column
        self.row = row
        super().__init__(f"non-finite value in column {column!r} at row {row}")


class EmptyInput(VcsFlowError, ValueError):
    pass


class MissingChannelStats(VcsFlowError, KeyError):
    pass


class RatioSumInvalid(VcsFlowError, ValueError):
    pass


class TooFewSamples(VcsFlowError, ValueError):
    pass


class MissingParam(VcsFlowError, KeyError):
    pass


class BadLength(VcsFlowError, ValueError):
    pass


class InvalidConfig(VcsFlowError, ValueError):
    pass


class InvalidBand(VcsFlowError, ValueError):
    pass


class TooShort(VcsFlowError, ValueError):
    pass


class TooFewWindows(VcsFlowError, ValueError):
    pass


class RecordingTooShort(VcsFlowError, ValueError):
    pass


class MissingFlowChannel(VcsFlowError, KeyError):
    pass


class MalformedSelectionFile(VcsFlowError, ValueError):
    pass


class RankDeficient(VcsFlowError, ValueError):
    def __init__(self, condition_number):
        self.condition_number = condition_number
        super().__init__(f"design matrix is rank deficient (condition number {condition_number:.3e})")


class ChannelMismatch(VcsFlowError, ValueError):
    pass


class DivergedLoss(VcsFlowError, FloatingPointError):
    pass


class LengthMismatch(VcsFlowError, ValueError):
    pass


class FlatRamp(VcsFlowError, ValueError):
    pass


class NoCrossing(VcsFlowError, ValueError):
    pass


class EmptyList(VcsFlowError, ValueError):
    pass
