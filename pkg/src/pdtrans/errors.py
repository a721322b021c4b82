"""Exception hierarchy shared by every pdtrans module."""


class PDTransError(Exception):
    """Base class for all errors raised by pdtrans."""


# data ---------------------------------------------------------------------


class MissingColumn(PDTransError, KeyError):
    def __init__(self, column: str, available):
        self.column = column
        self.available = list(available)
        super().__init__(f"column {column!r} not found; available: {self.available}")

    def __str__(self):
        return self.args[0]


class InvalidValue(PDTransError, ValueError):
    def __init__(self, row: int, column: str, raw):
        self.row = row
        self.column = column
        self.raw = raw
        super().__init__(f"row {row}: cannot parse {column}={raw!r}")


class NonMonotoneTimestamps(PDTransError, ValueError):
    def __init__(self, series_id: int, timestamp):
        self.series_id = series_id
        self.timestamp = timestamp
        super().__init__(f"series {series_id}: duplicate or non-increasing timestamp {timestamp}")


class GapInSeries(PDTransError, ValueError):
    def __init__(self, series_id: int, timestamp, expected):
        self.series_id = series_id
        self.timestamp = timestamp
        self.expected = expected
        super().__init__(
            f"series {series_id}: gap before timestamp {timestamp} (expected {expected})"
        )


class IndexOutOfRange(PDTransError, IndexError):
    pass


class WindowTooLong(PDTransError, ValueError):
    pass


class InvalidSpec(PDTransError, ValueError):
    pass


# model --------------------------------------------------------------------


class ShapeMismatch(PDTransError, ValueError):
    pass


class AllMaskedRow(PDTransError, ValueError):
    pass


class NonFiniteFeatures(PDTransError, ValueError):
    pass


class NonFiniteInput(PDTransError, ValueError):
    pass


class EvenKernel(PDTransError, ValueError):
    pass


class KernelTooLarge(PDTransError, ValueError):
    pass


class InvalidConfig(PDTransError, ValueError):
    pass


# objectives / training ----------------------------------------------------


class NonPositiveSigma(PDTransError, ValueError):
    pass


class NonPositiveCoefficient(PDTransError, ValueError):
    pass


class NonFiniteLoss(PDTransError, FloatingPointError):
    def __init__(self, batch_index: int, epoch: int, value: float):
        self.batch_index = batch_index
        self.epoch = epoch
        self.value = value
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch_index}")


class EmptyValidationSplit(PDTransError, ValueError):
    pass


class CheckpointFormatError(PDTransError, ValueError):
    pass


# evaluation ---------------------------------------------------------------


class ZeroDenominator(PDTransError, ZeroDivisionError):
    pass


class MissingGroundTruth(PDTransError, ValueError):
    pass


class HistoryTooShort(PDTransError, ValueError):
    pass
