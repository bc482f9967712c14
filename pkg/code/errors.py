# Exception hierarchy shared by every package under code/

from typing import Sequence


class TemporalPoolingError(Exception):
    """Base class for all errors raised by this project"""


class DimensionError(TemporalPoolingError, ValueError):
    """Operand shapes do not fit together"""

    def __init__(self, op: str, *shapes: Sequence[int], detail: str = ""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        shown = " vs ".join(str(s) for s in self.shapes)
        message = f"{op}: incompatible shapes {shown}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class ConfigError(TemporalPoolingError, ValueError):
    """Invalid hyperparameter, budget or geometry setting"""


class ContractError(TemporalPoolingError, RuntimeError):
    """An API precondition was violated by the caller"""


class DatasetFormatError(TemporalPoolingError, ValueError):
    """TPF1 container could not be decoded"""


class BadMagicError(DatasetFormatError):
    """File does not start with the TPF1 magic"""


class VersionMismatchError(DatasetFormatError):
    """Container version is not one we can read"""


class TruncatedPayloadError(DatasetFormatError):
    """Fewer bytes on disk than the header promises"""

    def __init__(self, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"truncated payload: expected {expected} bytes, got {actual}")
