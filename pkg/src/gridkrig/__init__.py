"""Nonparametric simple kriging on planar site sets.

Simulate stationary isotropic Gaussian fields, estimate their covariance
structure from a single gridded realization, build theoretical and plug-in
kriging predictors, and run reproducible prediction-error studies.
"""

from .covmodel import CovModel, ModelSpec, cov, cov_matrix, cov_vec, cov_vector, semivariogram
from .errors import NumericalError, ValidationError
from .estimate import (
    EmpiricalCovariance,
    EstimationConfig,
    empirical_cov,
    extrapolate,
    precision_hat,
    sigma_hat,
)
from .gaussfield import CholFactor, FieldSample, factorize, simulate, simulate_pair
from .grid import (
    LagTable,
    Site,
    SiteSet,
    bernoulli_thin,
    dyadic_grid,
    eval_grid,
    lag_graph,
    lag_table,
    sample_prediction_sites,
)
from .kriging import (
    KrigingPredictor,
    amse,
    empirical_ordinary,
    empirical_simple,
    excess_risk,
    imse,
    pointwise_mse_theoretical,
    theoretical_ordinary,
    theoretical_simple,
)

__version__ = "0.1.0"
