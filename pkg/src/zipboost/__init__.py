"""Second-order gradient-boosted trees for zero-inflated claim-frequency
modeling, with a Poisson GLM baseline, count-model diagnostics, and a batch
CLI."""

from .booster import (BoostConfig, Model, cross_validate, default_search_grid,
                      fit, fit_any, fit_zipb2, predict)
from .data import (BinnedMatrix, Dataset, Schema, TargetStatEncoder,
                   encode_categorical, fit_bins, load_csv)
from .errors import (FitError, MetricError, PredictionError, SchemaError,
                     ValidationError, ZipboostError)
from .explain import feature_importance, interaction_strength
from .glm import GlmModel, fit_glm, predict_glm
from .losses import GradHess, LossSpec, ZipParams
from .metrics import (EvalReport, VuongResult, evaluate, mean_deviance,
                      pseudo_r2, rqr, unit_deviance, vuong, zip_pmf)
from .simulate import simulate, simulation_schema
from .tree import Tree, build_tree, predict_tree

__version__ = "0.1.0"

__all__ = [
    "BinnedMatrix", "BoostConfig", "Dataset", "EvalReport", "FitError",
    "GlmModel", "GradHess", "LossSpec", "MetricError", "Model",
    "PredictionError", "Schema", "SchemaError", "TargetStatEncoder", "Tree",
    "ValidationError", "VuongResult", "ZipParams", "ZipboostError",
    "build_tree", "cross_validate", "default_search_grid",
    "encode_categorical", "evaluate", "feature_importance", "fit", "fit_any",
    "fit_bins", "fit_glm", "fit_zipb2", "interaction_strength", "load_csv",
    "mean_deviance", "predict", "predict_glm", "predict_tree", "pseudo_r2",
    "rqr", "simulate", "simulation_schema", "unit_deviance", "vuong",
    "zip_pmf", "__version__",
]
