"""Lattice language models over token chunks and multi-sense embeddings."""

from latticelm.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from latticelm.inference import (
    ApproxMode,
    brute_force_logprob,
    edge_posteriors,
    forward_marginalize,
    greedy_segmentation,
    sense_posteriors,
    sequential_logprob,
)
from latticelm.lattice import (
    Edge,
    Lattice,
    SegPath,
    build_dense,
    build_multilattice,
    build_single_path,
)
from latticelm.model import ModelConfig, build_model
from latticelm.training import (
    EvalReport,
    TrainConfig,
    TrainLog,
    evaluate_perplexity,
    train,
)
from latticelm.vocab import ChunkVocab, TokenVocab, build_chunk_vocab, preprocess

__version__ = "0.1.0"

__all__ = [
    "ApproxMode",
    "CheckpointError",
    "ChunkVocab",
    "Edge",
    "EvalReport",
    "Lattice",
    "ModelConfig",
    "SegPath",
    "TokenVocab",
    "TrainConfig",
    "TrainLog",
    "brute_force_logprob",
    "build_chunk_vocab",
    "build_dense",
    "build_model",
    "build_multilattice",
    "build_single_path",
    "edge_posteriors",
    "evaluate_perplexity",
    "forward_marginalize",
    "greedy_segmentation",
    "load_checkpoint",
    "preprocess",
    "save_checkpoint",
    "sense_posteriors",
    "sequential_logprob",
    "train",
]
