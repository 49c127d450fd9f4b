"""Hyperbolic Poincaré-ball embeddings for hyper-relational (n-ary) link prediction."""
from .graph import Dataset, Fact, Vocabulary, add_reciprocals
from .model import ModelParams, ScoreConfig, init_params, score, score_batch
from .train import TrainConfig, fit

__all__ = [
    "Dataset", "Fact", "Vocabulary", "add_reciprocals",
    "ModelParams", "ScoreConfig", "init_params", "score", "score_batch",
    "TrainConfig", "fit",
]
