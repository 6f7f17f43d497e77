"""Proportional-odds ordered-categorical regression with penalized smooths.

Fits cumulative-logit models whose linear predictor mixes parametric terms,
thin-plate regression splines and sum-to-zero factor-smooth deviations, with
smoothing parameters chosen by Laplace approximate marginal likelihood.
Built for phenology-style stage data: prediction with uncertainty bands,
surrogate-residual checking and posterior simulation of stage-transition
days are first-class operations.
"""

__version__ = "0.1.0"

from .archive import load_model, save_model
from .basis import assemble_design, build_sz, build_tprs, prediction_matrix
from .data import (ColumnSchema, Dataset, Observation, StageCoding,
                   derive_day_offset, load_dataset, write_dataset)
from .diagnostics import qq_logistic, residual_plot_data, surrogate_residuals
from .fitting import (FitResult, fit_model, format_summary, inner_newton,
                      laml, optimize_lambdas, summarize)
from .formula import FactorSmooth, Linear, ModelSpec, Smooth, parse_formula
from .inference import (crossing_days, find_crossings, posterior_draws,
                        predict_category, predict_cumulative, predict_linear,
                        quantile_day, rate_of_change, transition_density)
from .ocat import (Thresholds, category_probs, cumulative_geq, cumulative_leq,
                   cumulative_logodds, loglik, loglik_derivs,
                   raw_from_thresholds, thresholds_from_raw)
from .simulate import EtaSpec, TruthSpec, simulate_dataset

__all__ = [
    "ColumnSchema", "Dataset", "EtaSpec", "FactorSmooth", "FitResult",
    "Linear", "ModelSpec", "Observation", "Smooth", "StageCoding",
    "Thresholds", "TruthSpec", "assemble_design", "build_sz", "build_tprs",
    "category_probs", "crossing_days", "cumulative_geq", "cumulative_leq",
    "cumulative_logodds", "derive_day_offset", "find_crossings", "fit_model",
    "format_summary", "inner_newton", "laml", "load_dataset", "load_model",
    "loglik", "loglik_derivs", "optimize_lambdas", "parse_formula",
    "posterior_draws", "predict_category", "predict_cumulative",
    "predict_linear", "prediction_matrix", "qq_logistic", "quantile_day",
    "rate_of_change", "raw_from_thresholds", "residual_plot_data",
    "save_model", "simulate_dataset", "summarize", "surrogate_residuals",
    "thresholds_from_raw", "transition_density", "write_dataset",
]
