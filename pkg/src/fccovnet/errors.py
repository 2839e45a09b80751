"""Exception types shared across the package."""


class NumericalError(RuntimeError):
    """An iterative numerical routine failed to converge or produced non-finite values."""

    def __init__(self, message, iterations=None):
        if iterations is not None:
            message = f"{message} (after {iterations} iterations)"
        super().__init__(message)
        self.iterations = iterations


class NotPositiveDefiniteError(NumericalError):
    """A matrix required to be symmetric positive definite is not.

    ``index`` identifies the offending object when the failure occurs while
    validating a collection.
    """

    def __init__(self, message, index=None):
        if index is not None:
            message = f"{message} (object index {index})"
        super().__init__(message)
        self.index = index


class TrainingDivergedError(NumericalError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, iteration=None, grad_norm=None):
        if iteration is not None:
            message = f"{message} at iteration {iteration}"
        if grad_norm is not None:
            message = f"{message} (parameter gradient norm {grad_norm:.3e})"
        super().__init__(message)
        self.iteration = iteration
        self.grad_norm = grad_norm
