"""Exception hierarchy shared by every qrecover module."""


class QRecoverError(Exception):
    """Base class for all package errors."""


class CapacityError(QRecoverError):
    pass


class ArityError(QRecoverError, ValueError):
    pass


class QubitIndexError(QRecoverError, IndexError):
    pass


class ShapeError(QRecoverError, ValueError):
    pass


class SpecError(QRecoverError, ValueError):
    pass


class EncodingError(QRecoverError, ValueError):
    """Raised by the encoders; ``reason`` is ``"ZeroNorm"`` or ``"Overflow"``."""

    def __init__(self, reason: str, message: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {message}" if message else reason)


class EmptyBatchError(QRecoverError, ValueError):
    pass


class ChannelError(QRecoverError, ValueError):
    pass


class SplitError(QRecoverError, ValueError):
    pass


class DegenerateVariance(QRecoverError, ArithmeticError):
    """Loss differential has zero variance but a non-zero mean."""


class DataError(QRecoverError, ValueError):
    pass


class MissingColumn(DataError):
    pass


class NonNumericCell(DataError):
    def __init__(self, row: int, col: str, value: str):
        self.row = row
        self.col = col
        self.value = value
        super().__init__(f"non-numeric cell at row {row}, column {col!r}: {value!r}")


class EmptyFile(DataError):
    pass


class MissingFile(QRecoverError, FileNotFoundError):
    pass


class ProtocolMismatch(QRecoverError, ValueError):
    pass


class ConfigError(QRecoverError, ValueError):
    pass
