"""Document-level relation extraction with dependency-refined token states,
constituency subsentence modeling, dynamic attention fusion, and joint
relation/evidence classification."""

from .config import ModelConfig, load_config
from .corpus import (
    ChunkTokenizer,
    CorpusError,
    Document,
    Fact,
    Mention,
    Vocab,
    build_vocab,
    insert_mention_markers,
    load_corpus,
)
from .model import LarsonModel, featurize
from .objectives import compute_metrics, predict_relations
from .pipeline import evaluate_checkpoint, evaluate_model, load_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "ChunkTokenizer",
    "CorpusError",
    "Document",
    "Fact",
    "LarsonModel",
    "Mention",
    "ModelConfig",
    "Vocab",
    "build_vocab",
    "compute_metrics",
    "evaluate_checkpoint",
    "evaluate_model",
    "featurize",
    "insert_mention_markers",
    "load_checkpoint",
    "load_config",
    "load_corpus",
    "predict_relations",
    "train",
    "__version__",
]
