"""Bayesian cure-fraction regression with the defective generalized Gompertz law."""

__version__ = "0.1.0"

from .estimators import CureRegressor, check_survival_data
from .regression import DGGDCureModel, PriorSpec, SurvivalDataset
from .sampler import SamplerConfig

__all__ = ["CureRegressor", "check_survival_data", "DGGDCureModel", "PriorSpec", "SurvivalDataset", "SamplerConfig"]
