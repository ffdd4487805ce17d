"""Rank-constrained multivariate regression for mixed numeric, binary, and
ordinal responses, with optimal scaling of mixed-type predictors."""

from .dataset import (
    Dataset,
    DataError,
    IndicatorMatrix,
    ResponseEncoding,
    SchemaError,
    VariableSchema,
    build_indicator,
    load_dataset,
    load_schema,
    response_encoding,
    schema_hash,
    standardize,
    write_csv,
)
from .likelihood import (
    expected_latent_prob,
    logistic_cdf,
    nll,
    ordinal_category_probs,
    working_response,
)
from .scaling import (
    Quantification,
    ScaledPredictors,
    ScalingError,
    apply_scaling,
    update_quantification,
    weighted_monotone_regression,
)
from .solver import (
    FitOptions,
    FitResult,
    ModelParams,
    Predictions,
    SolverError,
    count_parameters,
    fit,
    identify,
    init_params,
    load_model,
    predict,
    save_model,
)
from .selection import (
    CvReport,
    SelectionReport,
    cross_validate,
    fit_null,
    ic_values,
    information_criteria,
    select_rank,
)
from .inference import (
    BootstrapReplicates,
    Ellipse,
    align_replicate,
    balanced_bootstrap_indices,
    bootstrap_se,
    category_contrasts,
    confidence_ellipse,
    implied_coefficients,
    run_bootstrap,
)
from .simulation import SCENARIOS, SimScenario, SimTruth, generate, rmse, run_study
from .baseline import (
    DummyDesign,
    SeparateFits,
    build_dummy_design,
    compare,
    fit_binary_logistic,
    fit_proportional_odds,
    fit_separate_models,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DataError", "IndicatorMatrix", "ResponseEncoding", "SchemaError",
    "VariableSchema", "build_indicator", "load_dataset", "load_schema",
    "response_encoding", "schema_hash", "standardize", "write_csv",
    "expected_latent_prob", "logistic_cdf", "nll", "ordinal_category_probs",
    "working_response",
    "Quantification", "ScaledPredictors", "ScalingError", "apply_scaling",
    "update_quantification", "weighted_monotone_regression",
    "FitOptions", "FitResult", "ModelParams", "Predictions", "SolverError",
    "count_parameters", "fit", "identify", "init_params", "load_model",
    "predict", "save_model",
    "CvReport", "SelectionReport", "cross_validate", "fit_null", "ic_values",
    "information_criteria", "select_rank",
    "BootstrapReplicates", "Ellipse", "align_replicate",
    "balanced_bootstrap_indices", "bootstrap_se", "category_contrasts",
    "confidence_ellipse", "implied_coefficients", "run_bootstrap",
    "SCENARIOS", "SimScenario", "SimTruth", "generate", "rmse", "run_study",
    "DummyDesign", "SeparateFits", "build_dummy_design", "compare",
    "fit_binary_logistic", "fit_proportional_odds", "fit_separate_models",
    "__version__",
]
