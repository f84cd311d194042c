"""Fact-preserving personalized news headline generation.

A self-contained float64 implementation: tensor engine with reverse-mode
autodiff, word-level text handling, dataset builders, the personalized
encoder-decoder model, the staged training schedule, beam-search decoding
and a three-axis evaluation suite.
"""

from .tensor import Tape, Tensor, backward
from .text import PAD, BOS, EOS, UNK, TokenSeq, Vocab, build_vocab, decode, encode
from .model import EncodedState, FpgModel, ModelConfig
from .data import (
    ClickLog,
    ContrastivePair,
    NewsArticle,
    TrainExample,
    build_contrastive_set,
    build_pretrain_set,
    build_training_set,
    generate_synthetic_benchmark,
    load_clicks,
    load_corpus,
)
from .training import StageConfig, AdamW, run_stage, train_full
from .decoding import Beam, beam_search
from .metrics import (
    EvalReport,
    TfidfEmbedder,
    evaluate_run,
    fact_consistency_proxy,
    personalization_scores,
    rouge_l,
    rouge_n,
)

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "PAD",
    "BOS",
    "EOS",
    "UNK",
    "TokenSeq",
    "Vocab",
    "build_vocab",
    "decode",
    "encode",
    "EncodedState",
    "FpgModel",
    "ModelConfig",
    "ClickLog",
    "ContrastivePair",
    "NewsArticle",
    "TrainExample",
    "build_contrastive_set",
    "build_pretrain_set",
    "build_training_set",
    "generate_synthetic_benchmark",
    "load_clicks",
    "load_corpus",
    "StageConfig",
    "AdamW",
    "run_stage",
    "train_full",
    "Beam",
    "beam_search",
    "EvalReport",
    "TfidfEmbedder",
    "evaluate_run",
    "fact_consistency_proxy",
    "personalization_scores",
    "rouge_l",
    "rouge_n",
]
