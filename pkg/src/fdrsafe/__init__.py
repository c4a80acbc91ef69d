"""Selective aggregation of local false discovery rate estimators."""
__version__ = "0.1.0"

from .core import (ConfigError, FdrFit, FdrSafeError, FitError, InputError, NullSpec,
                   PipelineError, empirical_Fdr, fdr_to_Fdr, mse_loss, to_pvalues)
from .estimators import GridConfig, ModelSpec, build_grid, fit_grid, fit_model
from .generator import (EmConfig, GeneratorParams, SyntheticDataset, fit_em, sample_dataset,
                        true_fdr)
from .metrics import (classify, evaluate, global_calibration, local_calibration, pr_auc,
                      roc_auc)
from .pipeline import (EnsembleResult, ObjectiveEstimate, SafeConfig, run_ablation,
                       run_fdrsafe)
from .simulation import ScenarioSpec, run_study

__all__ = [
    "__version__", "ConfigError", "FdrFit", "FdrSafeError", "FitError", "InputError",
    "NullSpec", "PipelineError", "empirical_Fdr", "fdr_to_Fdr", "mse_loss", "to_pvalues",
    "GridConfig", "ModelSpec", "build_grid", "fit_grid", "fit_model", "EmConfig",
    "GeneratorParams", "SyntheticDataset", "fit_em", "sample_dataset", "true_fdr",
    "classify", "evaluate", "global_calibration", "local_calibration", "pr_auc", "roc_auc",
    "EnsembleResult", "ObjectiveEstimate", "SafeConfig", "run_ablation", "run_fdrsafe",
    "ScenarioSpec", "run_study",
]
