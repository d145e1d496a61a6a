"""Multi-relation aware temporal interaction network embedding."""

from .config import ABLATIONS, DAY, HyperParams, RunConfig, SplitSpec
from .ingest import Interaction, TemporalInteractionNetwork, load_interactions, temporal_split
from .trainer import Engine, build_engine, process_batch, tn_batch, train
from .evaluator import Metrics, evaluate_online, mrr, recall_at_k

__all__ = [
    "ABLATIONS", "DAY", "HyperParams", "RunConfig", "SplitSpec",
    "Interaction", "TemporalInteractionNetwork", "load_interactions", "temporal_split",
    "Engine", "build_engine", "process_batch", "tn_batch", "train",
    "Metrics", "evaluate_online", "mrr", "recall_at_k",
]
