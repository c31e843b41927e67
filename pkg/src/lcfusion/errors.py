"""Exception types shared across the package.

The CLI maps these onto its exit codes: validation problems exit 1,
numerical failures exit 2, acceptance-check failures exit 3.
"""


class ValidationError(ValueError):
    """Bad input: shapes, configs, file contents, out-of-contract arguments."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite values."""

    def __init__(self, message, tensor_name=None):
        super().__init__(message)
        self.tensor_name = tensor_name


class AcceptanceError(AssertionError):
    """A self-check or acceptance-style verification failed."""
