"""Combine an unbiased and a biased estimate of the same quantity.

The core rule blends the two with a data-driven weight built from plug-in
variance estimates; the package also ships the competing weighting rules and
the simulation studies used to compare them.
"""

from .combiner import (CombinedEstimate, EstimatorDraw, MomentEstimates, Rule, ShapeParams,
                       combination_estimate, combine, lambda_hat, mse_closed_form,
                       optimal_lambda, supremizing_bias, worst_case_bound,
                       worst_case_bound_unknown_var)
from .errors import (ConfigError, DegenerateInputError, EstfuseError, InvalidMomentsError,
                     PositivityError)
from .moments import InfluencePanel, estimate_moments, ipw_influence

__all__ = [
    "CombinedEstimate", "EstimatorDraw", "MomentEstimates", "Rule", "ShapeParams",
    "combination_estimate", "combine", "lambda_hat", "mse_closed_form", "optimal_lambda",
    "supremizing_bias", "worst_case_bound", "worst_case_bound_unknown_var",
    "ConfigError", "DegenerateInputError", "EstfuseError", "InvalidMomentsError",
    "PositivityError", "InfluencePanel", "estimate_moments", "ipw_influence",
]
