"""Exception types raised across the package."""


class InvalidModelError(ValueError):
    """A transition model or MDP violates its structural invariants."""


class InvalidSetError(ValueError):
    """An ambiguity ball (nominal, weights, budget) is malformed."""


class SupportViolationError(ValueError):
    """Probability mass was found outside the declared support."""


class NonConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap.

    Attributes
    ----------
    residual : float
        Sup-norm change of the last iteration.
    iterations : int
        Number of iterations performed.
    """

    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
