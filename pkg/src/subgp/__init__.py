"""Ensemble GP regression for large datasets.

Pipeline: normalize a catalog, partition the unit cube into balanced
hyperrectangles, draw one point per cell with a graph-conditioned sampler,
fit a small global GP per draw, and combine the members into an equally
weighted Gaussian-mixture predictive distribution.
"""

__version__ = "0.1.0"

from .catalog import (
    Catalog,
    NormalizationState,
    clip_outliers,
    compute_features,
    holdout_indices,
    normalize,
    split_holdout,
)
from .ensemble import (
    EnsembleModel,
    MixturePredictive,
    hpd_region,
    load_ensemble,
    mixture_cdf,
    mixture_components,
    mixture_pdf,
    mixture_quantile,
    predictive,
    sample_predictive,
    save_ensemble,
    train_ensemble,
)
from .errors import ConfigError, DataError, NumericalError, SubgpError
from .evaluate import (
    PITResult,
    SyntheticSpec,
    SyntheticTruth,
    coverage,
    generate_synthetic,
    mode_count,
    pit,
)
from .gp import (
    FitOptions,
    GaussianPredictive,
    GPHyperparams,
    GPModel,
    fit,
    kernel,
    make_model,
    neg_log_likelihood,
    predict,
)
from .partition import (
    HyperRect,
    Partitioning,
    PartitionGraph,
    build_graph,
    equal_volume_partition,
    initialize_grid,
    merge_pass,
    partition_pipeline,
    partition_summary,
    split_pass,
)
from .sampler import (
    SamplerConfig,
    SubsampleDraw,
    conditional_draw,
    draw_subsample,
    next_cell,
    select_start,
)

__all__ = [
    "Catalog",
    "NormalizationState",
    "compute_features",
    "normalize",
    "split_holdout",
    "holdout_indices",
    "clip_outliers",
    "HyperRect",
    "Partitioning",
    "PartitionGraph",
    "initialize_grid",
    "merge_pass",
    "split_pass",
    "build_graph",
    "partition_pipeline",
    "equal_volume_partition",
    "partition_summary",
    "SamplerConfig",
    "SubsampleDraw",
    "select_start",
    "next_cell",
    "conditional_draw",
    "draw_subsample",
    "GPHyperparams",
    "GPModel",
    "GaussianPredictive",
    "FitOptions",
    "kernel",
    "neg_log_likelihood",
    "fit",
    "make_model",
    "predict",
    "EnsembleModel",
    "MixturePredictive",
    "train_ensemble",
    "predictive",
    "mixture_components",
    "mixture_pdf",
    "mixture_cdf",
    "mixture_quantile",
    "hpd_region",
    "sample_predictive",
    "save_ensemble",
    "load_ensemble",
    "PITResult",
    "SyntheticSpec",
    "SyntheticTruth",
    "pit",
    "coverage",
    "generate_synthetic",
    "mode_count",
    "SubgpError",
    "ConfigError",
    "DataError",
    "NumericalError",
]
