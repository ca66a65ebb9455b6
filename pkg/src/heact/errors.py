"""Exception hierarchy shared by every module.

Each class carries the CLI exit code it maps to, so the front-end can turn
any library failure into the right process status without a lookup table.
"""

from __future__ import annotations


class HeactError(Exception):
    exit_code = 4


class UsageError(HeactError):
    """Bad command-line input or bad arguments to a library call."""

    exit_code = 1


class ArgumentError(UsageError, ValueError):
    pass


class DomainError(HeactError, ValueError):
    exit_code = 2


class ParseError(HeactError, ValueError):
    """Malformed input file. ``where`` names the field path or row."""

    exit_code = 2

    def __init__(self, message: str, where: str | None = None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class ShapeError(HeactError, ValueError):
    exit_code = 2


class NumericalError(HeactError, ArithmeticError):
    exit_code = 3


class ParameterError(HeactError, ValueError):
    exit_code = 2


class CapacityError(HeactError, ValueError):
    exit_code = 2


class ScaleError(HeactError, ValueError):
    exit_code = 3


class StateError(HeactError, ValueError):
    """Level or scale mismatch between operands."""

    exit_code = 3


class DepthError(StateError):
    """No modulus-chain levels left to rescale into."""


class RotationKeyError(HeactError, KeyError):
    exit_code = 3


class PrecisionError(HeactError):
    exit_code = 3
