"""Deep image clustering: contrastive pretraining followed by multi-scale GCN self-training."""

from .config import Config, RunConfig, load_config, parse_config
from .data import ImageDataset, SyntheticSpec, generate_dataset, read_dataset, write_dataset
from .errors import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    DimensionError,
    DomainError,
    FormatError,
    IcicleError,
    NonFiniteError,
    TrainingDivergence,
)
from .metrics import ari, clustering_accuracy, confusion_matrix, evaluate, nmi
from .pipeline import execute, run_pipeline

__all__ = [
    "Config",
    "RunConfig",
    "load_config",
    "parse_config",
    "ImageDataset",
    "SyntheticSpec",
    "generate_dataset",
    "read_dataset",
    "write_dataset",
    "ConfigError",
    "ContractError",
    "DegenerateInputError",
    "DimensionError",
    "DomainError",
    "FormatError",
    "IcicleError",
    "NonFiniteError",
    "TrainingDivergence",
    "ari",
    "clustering_accuracy",
    "confusion_matrix",
    "evaluate",
    "nmi",
    "execute",
    "run_pipeline",
]
