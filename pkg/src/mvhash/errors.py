class MVHashError(Exception):
    pass


class DataError(MVHashError, ValueError):
    """Malformed or missing input data (CLI exit code 2)."""


class NumericError(MVHashError, ArithmeticError):
    """Non-finite loss or parameters during training (CLI exit code 3)."""
