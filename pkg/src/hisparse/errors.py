"""Exception types shared across the package."""


class HisparseError(Exception):
    """Base class for all errors raised by hisparse."""


class StructuralError(HisparseError, ValueError):
    """Shapes, index ranges or level counts do not fit together."""


class DomainError(HisparseError, ValueError):
    """A scalar argument lies outside its admissible range."""


class NumericalError(HisparseError, ArithmeticError):
    """Non-finite values were produced or supplied.

    ``iteration`` is set when the error comes out of an iterative solver.
    """

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class BudgetExceeded(HisparseError):
    """Refusal to enumerate or materialize beyond a configured budget.

    A truncated maximum over supports is not a certificate, so callers get an
    exception carrying the size of the request instead of a partial result.
    """

    def __init__(self, message, count, budget):
        super().__init__(message)
        self.count = count
        self.budget = budget
