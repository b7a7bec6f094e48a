"""Conformity-aware contrastive sequential recommender toolkit."""

from .config import SEARCH_RANGES, ConfigError, TrainConfig, load_config
from .data import (
    Interaction,
    SplitDataset,
    SyntheticSpec,
    UserSequence,
    build_sequences,
    ingest,
    leave_one_out,
    prepare_dataset,
    synthesize,
)
from .evaluation import MetricReport, rank_metrics
from .graphs import SparseGraph, build_cointeraction_graph, build_transition_graph, normalize, perturb_for_user
from .model import Recommender
from .trainer import TrainingAborted, train

__version__ = "0.1.0"

__all__ = [
    "SEARCH_RANGES",
    "ConfigError",
    "TrainConfig",
    "load_config",
    "Interaction",
    "SplitDataset",
    "SyntheticSpec",
    "UserSequence",
    "build_sequences",
    "ingest",
    "leave_one_out",
    "prepare_dataset",
    "synthesize",
    "MetricReport",
    "rank_metrics",
    "SparseGraph",
    "build_transition_graph",
    "build_cointeraction_graph",
    "normalize",
    "perturb_for_user",
    "Recommender",
    "TrainingAborted",
    "train",
    "__version__",
]
