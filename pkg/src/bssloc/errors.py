"""Exception types shared across the package."""


class InputError(ValueError):
    """Bad user-supplied input: malformed file, invalid config, infeasible request.

    The CLI maps this to exit code 2; everything else that escapes is a
    runtime failure (exit code 1).
    """


class FitError(RuntimeError):
    """Gaussian-process fit could not produce a positive-definite covariance."""


class BudgetExhausted(RuntimeError):
    """Raised internally by budgeted objectives when no evaluations remain."""
