"""Dual-prototype compositional zero-shot classification over precomputed
embeddings: semantic prototypes from learnable soft prompts, a
graph-refreshed visual prototype codebook, and the seen/unseen bias-sweep
evaluation protocol."""

from .config import TrainConfig
from .data import (
    CompositionSpace,
    EmbeddingDataset,
    generate_synthetic,
    load_dataset,
    target_space,
    write_dataset,
)
from .errors import DualprotoError
from .metrics import MetricsReport, bias_sweep, candidate_biases, summarize, topk
from .model import DualPrototypeClassifier
from .objective import ablation_score, class_probs, fused_score, predict
from .train import evaluate, gradient_check, retrieve, train

__version__ = "0.1.0"

__all__ = [
    "CompositionSpace",
    "DualPrototypeClassifier",
    "DualprotoError",
    "EmbeddingDataset",
    "MetricsReport",
    "TrainConfig",
    "ablation_score",
    "bias_sweep",
    "candidate_biases",
    "class_probs",
    "evaluate",
    "fused_score",
    "generate_synthetic",
    "gradient_check",
    "load_dataset",
    "predict",
    "retrieve",
    "summarize",
    "target_space",
    "topk",
    "train",
    "write_dataset",
]
