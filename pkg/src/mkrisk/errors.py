"""Exception hierarchy shared by the library and the command line."""


class MKRiskError(Exception):
    """Base class for all errors raised by mkrisk."""

    exit_code = 1


class ParameterError(MKRiskError, ValueError):
    """Invalid argument: level out of range, bad dimension, p <= 1, ..."""

    exit_code = 1


class DataError(MKRiskError, ValueError):
    """Unusable input data: ragged CSV rows, non-finite values, degenerate clouds."""

    exit_code = 2


class NumericalError(MKRiskError, ArithmeticError):
    """A solver produced NaN/Inf or otherwise broke down."""

    exit_code = 3
