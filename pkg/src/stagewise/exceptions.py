"""Exception types shared across the package."""


class InputError(ValueError):
    """Invalid user input: bad domain values, malformed files, missing columns."""


class NumericError(RuntimeError):
    """Numerical failure during fitting (non-finite likelihood, non-convergence).

    ``last_iterate`` carries the most recent parameter values when a solver
    gives up, so callers can inspect how far it got.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate
