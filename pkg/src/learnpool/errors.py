"""Exception types shared across the package.

The CLI maps these onto exit codes: InvalidArgument -> 2, FormatError -> 3,
NumericFailure -> 4.
"""


class InvalidArgument(ValueError):
    """A precondition on shapes, counts or hyperparameters was violated."""


class FormatError(ValueError):
    """A file on disk does not have the expected binary or text layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericFailure(ArithmeticError):
    """An objective, gradient or decomposition produced non-finite values."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration
