"""Semi-supervised classification of graph instances linked in a hierarchical graph."""

from .errors import (
    ConfigError,
    DataFormatError,
    DimensionError,
    OracleError,
    SealAborted,
    SealError,
    UsageError,
    ValidationError,
)
from .graph import GraphInstance, HierarchicalGraph, normalize_adjacency, split, validate
from .hgcn import HcConfig, HcParams, hc_forward, train_hc
from .metrics import accuracy, macro_f1
from .sage import PROFILES, SageParams, TrainConfig, embed_all, sage_forward, train_ic
from .seal import DatasetOracle, SealConfig, seal_ai, seal_ci
from .syngen import GenConfig, generate_dataset, make_benchmark

__all__ = [
    "ConfigError", "DataFormatError", "DimensionError", "OracleError", "SealAborted", "SealError",
    "UsageError", "ValidationError", "GraphInstance", "HierarchicalGraph", "normalize_adjacency",
    "split", "validate", "HcConfig", "HcParams", "hc_forward", "train_hc", "accuracy", "macro_f1",
    "PROFILES", "SageParams", "TrainConfig", "embed_all", "sage_forward", "train_ic",
    "DatasetOracle", "SealConfig", "seal_ai", "seal_ci", "GenConfig", "generate_dataset",
    "make_benchmark",
]

__version__ = "0.1.0"
