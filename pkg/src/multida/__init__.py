"""multiDA: high-dimensional diagonal discriminant analysis with
class-partition hypothesis testing for feature selection."""

__version__ = "0.1.0"

from .errors import FormatError, MultidaError, NumericError, ValidationError
from .partitions import (
    PartitionSet,
    allocation_matrix,
    bell_number,
    build_partition_set,
    canonicalize,
    enumerate_exhaustive,
    group_index,
    refines,
)
from .estimator import (
    Dataset,
    FittedModel,
    PenaltyConfig,
    Prediction,
    SufficientStats,
    accumulate_stats,
    fit,
    fit_mles,
    gamma_weights,
    lrt,
    predict,
    selected_features,
    validate_model,
)
from .data_io import (
    CsvSchema,
    filter_features,
    load_dataset,
    load_matrix,
    load_model,
    save_dataset,
    save_model,
)
from .simlab import (
    CvResult,
    SimReport,
    SimSpec,
    TruthAssignment,
    consistency_sweep,
    cross_validate,
    gen_dependent,
    gen_independent,
    generate,
    selection_error,
)

__all__ = [
    "__version__",
    "MultidaError",
    "ValidationError",
    "FormatError",
    "NumericError",
    "PartitionSet",
    "allocation_matrix",
    "bell_number",
    "build_partition_set",
    "canonicalize",
    "enumerate_exhaustive",
    "group_index",
    "refines",
    "Dataset",
    "FittedModel",
    "PenaltyConfig",
    "Prediction",
    "SufficientStats",
    "accumulate_stats",
    "fit",
    "fit_mles",
    "gamma_weights",
    "lrt",
    "predict",
    "selected_features",
    "validate_model",
    "CsvSchema",
    "filter_features",
    "load_dataset",
    "load_matrix",
    "load_model",
    "save_dataset",
    "save_model",
    "CvResult",
    "SimReport",
    "SimSpec",
    "TruthAssignment",
    "consistency_sweep",
    "cross_validate",
    "gen_dependent",
    "gen_independent",
    "generate",
    "selection_error",
]
