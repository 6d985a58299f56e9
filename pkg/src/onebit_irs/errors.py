"""Exception types raised across the package."""

import numpy as np


class ConfigError(ValueError):
    """Invalid scenario dimensions or incompatible options."""


class UnsupportedModeError(ValueError):
    """Operation requested for a scenario mode that does not support it."""


class SingularMatrixError(np.linalg.LinAlgError):
    """A factorization hit a non-positive (or vanishing) pivot.

    Attributes
    ----------
    pivot : int
        1-based index of the failing pivot, as reported by LAPACK, or the
        block index for structured inverses.
    """

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class EstimationError(RuntimeError):
    """Numerical failure inside an iterative estimator."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class EmptySupportError(ValueError):
    """Row-support detection returned no rows above threshold."""
