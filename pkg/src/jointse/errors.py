"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Input violates a shape, range or content precondition."""


class InvalidStateError(RuntimeError):
    """Operation requested in a state that does not support it."""


class NumericError(ArithmeticError):
    """Non-finite values produced while debug checks are enabled."""


class AlignmentError(InvalidInputError):
    """CTC target cannot be aligned to the available encoder frames."""


class NumericDivergence(NumericError):
    """Training produced a non-finite loss; carries the offending step report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
