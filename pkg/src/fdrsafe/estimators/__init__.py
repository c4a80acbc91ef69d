"""Candidate fdr estimators and the model grid."""
from .empirical_null import fit_empirical_null
from .grenander import fit_grenander, grenander_density, least_concave_majorant
from .grid import (FAMILIES, GridConfig, ModelSpec, build_grid, fit_grid, fit_model,
                   load_grid_config)
from .pvalue import estimate_pi0_lambda, fit_pvalue_family, pi0_lambda

__all__ = [
    "FAMILIES", "GridConfig", "ModelSpec", "build_grid", "fit_grid", "fit_model",
    "load_grid_config", "fit_empirical_null", "fit_grenander", "grenander_density",
    "least_concave_majorant", "fit_pvalue_family", "estimate_pi0_lambda", "pi0_lambda",
]
