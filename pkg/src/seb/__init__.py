"""Subword embeddings from bytes, and a federated-learning simulator for
measuring how much they hide from embedding-gradient attacks."""

__version__ = "0.1.0"

from .attack import (
    AttackConfig,
    AttackReport,
    Granularity,
    Rule,
    coverage_curve,
    expand_candidates,
    extract_byte_candidates,
    extract_subword_candidates,
    gradient_prune,
    rouge_scores,
    run_attack,
)
from .embedding import (
    EmbeddingDims,
    EmbeddingParams,
    GradientSnapshot,
    Variant,
    embed_backward,
    embed_forward,
    embedding_similarity,
    init_params,
    param_count,
)
from .federated import Aggregation, FLConfig, fed_round, partition, train
from .mapping import ByteMapping, build_mapping, collision_probability, load_mapping, save_mapping
from .model import TaskModel, backward, evaluate, forward_loss, init_model
from .text import LabeledCorpus, SubwordVocab, build_vocab, load_vocab, save_vocab, tokenize
