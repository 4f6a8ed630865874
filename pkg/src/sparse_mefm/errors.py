"""Exception hierarchy shared by the estimation, simulation and CLI layers."""


class MEFMError(Exception):
    """Base class for all package errors."""


class DataValidityError(MEFMError, ValueError):
    """Input data is malformed (wrong shape, non-finite entries, ...)."""


class DimensionError(MEFMError, ValueError):
    """Arrays that must agree in shape do not."""


class IdentificationError(MEFMError, ValueError):
    """Main effects violate the min-zero identification condition."""


class NumericalError(MEFMError, ArithmeticError):
    """A linear-algebra routine failed or the problem is degenerate."""


class ConvergenceError(NumericalError):
    """An iterative routine stopped before reaching its tolerance.

    The best iterate and its residual are kept so callers can inspect or
    accept them.
    """

    def __init__(self, message, best=None, residual=None, lam=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.lam = lam


class FitError(MEFMError):
    """One or more per-series problems failed inside a batch fit."""

    def __init__(self, message, failures):
        super().__init__(message)
        self.failures = failures


class FileFormatError(MEFMError, OSError):
    """A data or config file does not follow its documented format."""
