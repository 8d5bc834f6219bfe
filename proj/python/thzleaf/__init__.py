"""THz leaf-wetness toolkit: synthetic traces, tree and CNN regressors, metrics."""

from ._core import (
    CnnModel,
    ConfigError,
    Dataset,
    FormatError,
    InvalidArgument,
    IoError,
    NumericError,
    PipelineError,
    TreeModel,
    __version__,
    cnn_parameter_counts,
    cnn_shape_chain,
    detect_onset,
    feature_matrix,
    fit_polynomial,
    generate_dataset,
    mae,
    median_pct_diff,
    resolved_config,
    run_cli,
    set_thread_count,
    slab_transmission,
    split_random,
    train_cnn,
    train_tree,
    water_absorption_per_cm,
)

__all__ = [name for name in dir() if not name.startswith("_")]
