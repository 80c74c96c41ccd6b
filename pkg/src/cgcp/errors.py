class ArgumentError(ValueError):
    """Invalid argument (bad shape, out-of-range degree, rank above bound, ...)."""


class NumericalError(ArithmeticError):
    """Non-finite values or a degenerate numerical computation."""

    def __init__(self, message, iteration=None):
        super().__init__(message if iteration is None else f"{message} (iteration {iteration})")
        self.iteration = iteration
