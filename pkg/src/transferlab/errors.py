"""Exception types raised across the package."""


class TransferLabError(Exception):
    """Base class for all package errors."""


class DomainEscape(TransferLabError):
    """A map value left [0, 1] on an interval domain without wrapping."""


class WeightSumError(TransferLabError):
    pass


class NoiseNormalizationError(TransferLabError):
    pass


class SpecError(TransferLabError):
    """Malformed system specification."""


class ZeroSlopeOverlap(TransferLabError):
    pass


class RowDefectTooLarge(TransferLabError):
    pass


class DimensionMismatch(TransferLabError):
    pass


class EmptySupport(TransferLabError):
    pass


class NoConvergence(TransferLabError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class CyclicClassMismatch(TransferLabError):
    pass


class MonotonicityViolation(TransferLabError):
    pass


class MultipleComponents(TransferLabError):
    pass


class PeriodNotOne(TransferLabError):
    pass


class SupportViolation(TransferLabError):
    pass


class UnknownId(TransferLabError, KeyError):
    pass


class NotRepresentable(TransferLabError):
    """A step function cannot be pushed exactly (e.g. a constant branch)."""
