"""Sparse n-gram DAN students distilled from large teachers."""

from ._core import (
    ConfigError,
    DataValidationError,
    EmptyCorpusError,
    Error,
    IntegrityError,
    IoError,
    Model,
    StructuralError,
    UndefinedCoverageError,
    VersionError,
    Vocab,
    __version__,
    build_vocab,
    featurize,
    ft_loss,
    kd_loss,
    load_model,
    load_vocab,
    param_count,
    run_pipeline,
    tokenize,
    validate_data,
)

__all__ = [
    "ConfigError",
    "DataValidationError",
    "EmptyCorpusError",
    "Error",
    "IntegrityError",
    "IoError",
    "Model",
    "StructuralError",
    "UndefinedCoverageError",
    "VersionError",
    "Vocab",
    "__version__",
    "build_vocab",
    "featurize",
    "ft_loss",
    "kd_loss",
    "load_model",
    "load_vocab",
    "param_count",
    "run_pipeline",
    "tokenize",
    "validate_data",
]
