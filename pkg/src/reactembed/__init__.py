"""Align frozen protein and molecule embeddings through a reaction co-occurrence graph."""

from .embedding_store import EmbeddingTable, load_embeddings
from .errors import DataError, ParseError, SamplingError, TrainingError
from .evaluation import KNNClassifier, auc, rmse, train_probe
from .projection_net import AdamW, Checkpoint, ProjectionNet, init_net
from .reaction_graph import Domain, EntityRef, ReactionGraph, ReactionRecord, build_graph, parse_reactions
from .trainer import TrainConfig, combined_loss, train, triplet_loss
from .unified_space import embed_all, export_unified, load_unified

__version__ = "0.1.0"

__all__ = [
    "AdamW", "Checkpoint", "DataError", "Domain", "EmbeddingTable", "EntityRef", "KNNClassifier",
    "ParseError", "ProjectionNet", "ReactionGraph", "ReactionRecord", "SamplingError", "TrainConfig",
    "TrainingError", "auc", "build_graph", "combined_loss", "embed_all", "export_unified", "init_net",
    "load_embeddings", "load_unified", "parse_reactions", "rmse", "train", "train_probe", "triplet_loss",
]
