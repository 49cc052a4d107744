"""Functional singular value decomposition of bivariate processes.

Spline estimators of the components ``phi_k(s)``, ``psi_k(t)`` and
root-eigenvalues of the mean surface of a sample of gridded surfaces,
with free-knot selection, individual scores and predictors, a
tensor-product spline comparator and a Monte Carlo study harness.
"""

from .bspline import SplineBasis, SplineCurve, evaluate_basis, saturated_basis
from .core import (
    ComponentPair,
    DataTensor,
    Decomposition,
    MeanSurface,
    cross_sectional_mean,
    cross_validate_order,
    fit_fsvd,
    individual_predictor,
    scores,
    truncated_mean,
)
from .freeknot import KnotSearchConfig, fit_fsvd_freeknot
from .quadrature import Grid, trapezoid_weights

__version__ = "0.1.0"

__all__ = [
    "ComponentPair",
    "DataTensor",
    "Decomposition",
    "Grid",
    "KnotSearchConfig",
    "MeanSurface",
    "SplineBasis",
    "SplineCurve",
    "cross_sectional_mean",
    "cross_validate_order",
    "evaluate_basis",
    "fit_fsvd",
    "fit_fsvd_freeknot",
    "individual_predictor",
    "saturated_basis",
    "scores",
    "trapezoid_weights",
    "truncated_mean",
]
