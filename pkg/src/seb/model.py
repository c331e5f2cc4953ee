"""Mean-pooled linear classifier over an embedding layer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .embedding import (
    EmbeddingDims,
    EmbeddingParams,
    GradientSnapshot,
    Variant,
    embed_backward,
    embed_forward,
    init_params,
    scatter_add_rows,
)
from .mapping import ByteMapping
from .rng import TAG_INIT, Stream
from .text import PAD_ID, UNK_ID

Example = tuple[Sequence[int], int]


@dataclass(frozen=True)
class TaskModel:
    embedding: EmbeddingParams
    head_W: np.ndarray = field(repr=False)
    head_b: np.ndarray = field(repr=False)

    def __post_init__(self):
        d_out = self.embedding.dims.d_out
        if self.head_W.ndim != 2 or self.head_W.shape[0] != d_out:
            raise ValueError(f"head input dim {self.head_W.shape[0]} != embedding d_out {d_out}")
        if self.head_b.shape != (self.head_W.shape[1],):
            raise ValueError("head bias must have one entry per class")
        if not (np.all(np.isfinite(self.head_W)) and np.all(np.isfinite(self.head_b))):
            raise ValueError("head contains non-finite values")

    @property
    def num_classes(self) -> int:
        return self.head_W.shape[1]

    @property
    def variant(self) -> Variant:
        return self.embedding.variant

    @property
    def dims(self) -> EmbeddingDims:
        return self.embedding.dims

    def parameters(self) -> dict[str, np.ndarray]:
        return {**self.embedding.tensors, "head_W": self.head_W, "head_b": self.head_b}

    def with_parameters(self, params: dict[str, np.ndarray]) -> "TaskModel":
        emb = self.embedding.with_tensors({k: params[k] for k in self.embedding.tensors})
        return TaskModel(emb, params["head_W"], params["head_b"])

    def apply_gradient(self, grads: dict[str, np.ndarray], lr: float) -> "TaskModel":
        return self.with_parameters({k: v - lr * grads[k] for k, v in self.parameters().items()})


def init_model(variant: Variant, dims: EmbeddingDims, num_classes: int, seed: int = 0, scale: float = 0.1) -> TaskModel:
    emb = init_params(variant, dims, seed=seed, scale=scale)
    head = Stream(seed, TAG_INIT, 100).uniform(-scale, scale, (dims.d_out, num_classes))
    return TaskModel(emb, head, np.zeros(num_classes))


@dataclass
class LossCache:
    model: TaskModel
    embed_cache: object
    lengths: np.ndarray
    pooled: np.ndarray
    probs: np.ndarray
    labels: np.ndarray


def clean_sequence(ids: Sequence[int]) -> list[int]:
    """Drop ``<pad>`` positions; an empty result becomes a single ``<unk>``."""
    kept = [int(i) for i in ids if int(i) != PAD_ID]
    return kept or [UNK_ID]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _pool(model: TaskModel, sequences: list[list[int]], mapping: ByteMapping | None):
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    flat = np.concatenate([np.asarray(s, dtype=np.int64) for s in sequences])
    emb, cache = embed_forward(flat, mapping, model.embedding)
    pooled = scatter_add_rows(len(sequences), np.repeat(np.arange(len(sequences)), lengths), emb)
    pooled /= lengths[:, None]
    return pooled, lengths, cache


def logits(model: TaskModel, sequences: Sequence[Sequence[int]], mapping: ByteMapping | None) -> np.ndarray:
    pooled, _, _ = _pool(model, [clean_sequence(s) for s in sequences], mapping)
    return pooled @ model.head_W + model.head_b


def forward_loss(model: TaskModel, batch: Sequence[Example], mapping: ByteMapping | None):
    """Mean cross-entropy of the batch and the cache for :func:`backward`."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    labels = np.array([int(y) for _, y in batch], dtype=np.int64)
    if labels.min() < 0 or labels.max() >= model.num_classes:
        raise ValueError(f"label outside [0, {model.num_classes})")
    pooled, lengths, ecache = _pool(model, [clean_sequence(ids) for ids, _ in batch], mapping)
    logp = log_softmax(pooled @ model.head_W + model.head_b)
    loss = float(-logp[np.arange(labels.size), labels].mean())
    return loss, LossCache(model, ecache, lengths, pooled, np.exp(logp), labels)


def backward(model: TaskModel, cache: LossCache, **meta) -> GradientSnapshot:
    """Exact gradient of the mean batch loss with respect to every parameter."""
    if cache.model is not model:
        raise ValueError("cache does not belong to this model")
    bsz = cache.labels.size
    dlogits = cache.probs.copy()
    dlogits[np.arange(bsz), cache.labels] -= 1.0
    dlogits /= bsz
    d_pooled = dlogits @ model.head_W.T
    d_emb = np.repeat(d_pooled / cache.lengths[:, None], cache.lengths, axis=0)
    grads = embed_backward(cache.embed_cache, d_emb)
    grads["head_W"] = cache.pooled.T @ dlogits
    grads["head_b"] = dlogits.sum(axis=0)
    meta.setdefault("batch_size", bsz)
    return GradientSnapshot(model.variant, model.dims, grads, **meta)


def loss_and_grad(model: TaskModel, batch: Sequence[Example], mapping: ByteMapping | None, **meta):
    loss, cache = forward_loss(model, batch, mapping)
    return loss, backward(model, cache, **meta)


def predict(model: TaskModel, sequences: Sequence[Sequence[int]], mapping: ByteMapping | None,
            chunk: int = 1024) -> np.ndarray:
    # np.argmax returns the first maximum, so ties go to the lower class id
    out = [np.argmax(logits(model, sequences[i:i + chunk], mapping), axis=1) for i in range(0, len(sequences), chunk)]
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def evaluate(model: TaskModel, examples: Sequence[Example], mapping: ByteMapping | None) -> float:
    if len(examples) == 0:
        return float("nan")
    preds = predict(model, [ids for ids, _ in examples], mapping)
    labels = np.array([y for _, y in examples])
    return float(np.mean(preds == labels))
