"""Sign-constrained empirical-risk minimisation for linear predictors.

Squared, logistic and quantile (check) losses under beta >= 0, a
cross-validated Lasso baseline, design constants (positive eigenvalue,
compatibility, restricted eigenvalue), oracle-bound arithmetic and a Toeplitz
Monte Carlo harness.
"""

__version__ = "0.1.0"

from .estimators import FitResult, fit_lasso, fit_lasso_cv, fit_sign_constrained
from .losses import LossSpec
from .model import Dataset, GramMatrix, SupportSet, load_csv

__all__ = [
    "Dataset",
    "FitResult",
    "GramMatrix",
    "LossSpec",
    "SupportSet",
    "fit_lasso",
    "fit_lasso_cv",
    "fit_sign_constrained",
    "load_csv",
]
