"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class ConvergenceError(RuntimeError):
    """An iterative method stopped before reaching its tolerance.

    ``partial`` carries the best iterate (or report) available, ``residual`` the
    achieved residual.
    """

    def __init__(self, message, *, residual=None, iterations=None, partial=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.partial = partial
