"""Subword embeddings built from byte sequences, with exact backward passes.

Four schemes share one interface:

* ``SUBWORD``: a plain ``V_w x d_out`` lookup table (the baseline).
* ``SEB_AR``: byte rows of ``B`` are summed per subword, then a 2-layer FFN.
* ``SEB_CR``: byte rows of ``B`` are concatenated in byte order (row-major
  reshape of the ``mn x d`` gather to ``m x nd``), then the FFN.
* ``SEB_CO``: one-hot byte vectors are concatenated to length ``n * V_b``
  and fed to the FFN.  The product with ``W1`` is computed by gathering the
  ``n`` rows ``j * V_b + b_j`` of ``W1`` and summing them.

The FFN is ``relu(X @ W1 + b1) @ W2 + b2``; biases are optional and off by
default.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np
from scipy import sparse

from .mapping import ByteMapping
from .rng import TAG_INIT, Stream


class Variant(str, enum.Enum):
    SUBWORD = "SUBWORD"
    SEB_AR = "SEB_AR"
    SEB_CR = "SEB_CR"
    SEB_CO = "SEB_CO"

    @property
    def tag(self) -> int:
        return list(Variant).index(self)

    @property
    def uses_mapping(self) -> bool:
        return self is not Variant.SUBWORD

    @property
    def has_byte_matrix(self) -> bool:
        return self in (Variant.SEB_AR, Variant.SEB_CR)


@dataclass(frozen=True)
class EmbeddingDims:
    """Sizes of one embedding scheme.

    ``d`` is the real-valued byte embedding width (SEB_AR / SEB_CR only),
    ``h`` the FFN hidden width and ``d_out`` the subword embedding width.
    """

    vocab_size: int
    d_out: int = 512
    byte_vocab_size: int = 256
    n: int = 8
    d: int = 512
    h: int = 1024
    use_bias: bool = False

    def ffn_in_dim(self, variant: Variant) -> int:
        variant = Variant(variant)
        if variant is Variant.SEB_AR:
            return self.d
        if variant is Variant.SEB_CR:
            return self.n * self.d
        if variant is Variant.SEB_CO:
            return self.n * self.byte_vocab_size
        raise ValueError("SUBWORD has no FFN")

    def shapes(self, variant: Variant) -> dict[str, tuple[int, ...]]:
        """Parameter name -> shape, in canonical order."""
        variant = Variant(variant)
        if variant is Variant.SUBWORD:
            return {"W": (self.vocab_size, self.d_out)}
        shapes: dict[str, tuple[int, ...]] = {}
        if variant.has_byte_matrix:
            shapes["B"] = (self.byte_vocab_size, self.d)
        shapes["W1"] = (self.ffn_in_dim(variant), self.h)
        if self.use_bias:
            shapes["b1"] = (self.h,)
        shapes["W2"] = (self.h, self.d_out)
        if self.use_bias:
            shapes["b2"] = (self.d_out,)
        return shapes


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingParams:
    variant: Variant
    dims: EmbeddingDims
    tensors: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        expected = self.dims.shapes(self.variant)
        if set(self.tensors) != set(expected):
            raise DimensionError(
                f"{self.variant.value} expects tensors {sorted(expected)}, got {sorted(self.tensors)}"
            )
        for name, shape in expected.items():
            arr = self.tensors[name]
            if arr.shape != shape:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        ordered = {name: np.asarray(self.tensors[name], dtype=np.float64) for name in expected}
        object.__setattr__(self, "tensors", ordered)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __getattr__(self, name):
        tensors = self.__dict__.get("tensors", {})
        if name in tensors:
            return tensors[name]
        raise AttributeError(name)

    @property
    def num_scalars(self) -> int:
        return sum(arr.size for arr in self.tensors.values())

    def with_tensors(self, tensors: dict[str, np.ndarray]) -> "EmbeddingParams":
        return replace(self, tensors=tensors)


@dataclass(frozen=True)
class GradientSnapshot:
    """Per-parameter gradients one client uploads for one batch.

    ``grads`` holds embedding tensors under their parameter names and, for
    full-model snapshots, the classifier head under ``head_W`` / ``head_b``.
    """

    variant: Variant
    dims: EmbeddingDims
    grads: dict[str, np.ndarray] = field(repr=False)
    client_id: int = -1
    round: int = -1
    batch_size: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        for name, g in self.grads.items():
            if not np.all(np.isfinite(g)):
                raise ValueError(f"gradient {name} contains non-finite values")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.grads[name]

    def with_grads(self, grads: dict[str, np.ndarray]) -> "GradientSnapshot":
        return replace(self, grads=grads)


def init_params(
    variant: Variant,
    dims: EmbeddingDims,
    seed: int = 0,
    scale: float = 0.1,
) -> EmbeddingParams:
    """Weights i.i.d. uniform in ``[-scale, scale]``; biases zero."""
    variant = Variant(variant)
    for name, value in (("vocab_size", dims.vocab_size), ("d_out", dims.d_out)):
        if value < 0:
            raise DimensionError(f"{name} must be non-negative")
    if variant.uses_mapping:
        if not 2 <= dims.byte_vocab_size <= 256 or dims.n < 1 or dims.h < 1:
            raise DimensionError(f"inconsistent dims for {variant.value}: {dims}")
        if variant.has_byte_matrix and dims.d < 1:
            raise DimensionError(f"{variant.value} needs d >= 1")
    stream = Stream(seed, TAG_INIT, variant.tag)
    tensors = {}
    for name, shape in dims.shapes(variant).items():
        if name in ("b1", "b2"):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = stream.uniform(-scale, scale, shape)
    return EmbeddingParams(variant, dims, tensors)


@dataclass
class EmbedCache:
    variant: Variant
    dims: EmbeddingDims
    ids: np.ndarray
    byte_rows: np.ndarray | None = None
    x: np.ndarray | None = None
    z1: np.ndarray | None = None
    a1: np.ndarray | None = None
    params: EmbeddingParams | None = field(default=None, repr=False)


def _check_ids(ids, vocab_size: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        bad = ids[(ids < 0) | (ids >= vocab_size)][0]
        raise IndexError(f"subword id {bad} outside [0, {vocab_size})")
    return ids


def _check_mapping(mapping: ByteMapping | None, dims: EmbeddingDims) -> ByteMapping:
    if mapping is None:
        raise DimensionError("byte-based variants need a mapping")
    if (mapping.vocab_size, mapping.byte_vocab_size, mapping.bytes_per_subword) != (
        dims.vocab_size,
        dims.byte_vocab_size,
        dims.n,
    ):
        raise DimensionError(
            f"mapping (V_w={mapping.vocab_size}, V_b={mapping.byte_vocab_size}, n={mapping.bytes_per_subword}) "
            f"does not match dims (V_w={dims.vocab_size}, V_b={dims.byte_vocab_size}, n={dims.n})"
        )
    return mapping


def scatter_add_rows(num_rows: int, index: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``out[index[k]] += values[k]`` over a zero array with ``num_rows`` rows."""
    index = np.asarray(index, dtype=np.int64).reshape(-1)
    selector = sparse.csr_matrix(
        (np.ones(index.size), (index, np.arange(index.size))), shape=(num_rows, index.size)
    )
    return np.asarray(selector @ values.reshape(index.size, -1)).reshape((num_rows,) + values.shape[1:])


def co_rows(byte_rows: np.ndarray, byte_vocab_size: int) -> np.ndarray:
    """Row indices into ``W1`` hit by each (position, byte) pair: ``j * V_b + b``."""
    n = byte_rows.shape[1]
    return byte_rows + byte_vocab_size * np.arange(n, dtype=np.int64)


def one_hot_concat(byte_rows: np.ndarray, byte_vocab_size: int) -> np.ndarray:
    """Explicit ``m x (n * V_b)`` concatenated one-hot matrix (reference path)."""
    m, n = byte_rows.shape
    out = np.zeros((m, n * byte_vocab_size))
    out[np.repeat(np.arange(m), n), co_rows(byte_rows, byte_vocab_size).reshape(-1)] = 1.0
    return out


def embed_forward(ids, mapping: ByteMapping | None, params: EmbeddingParams):
    """Embed ``m`` subword ids; returns ``(E', cache)`` with ``E'`` of shape ``m x d_out``."""
    variant, dims, t = params.variant, params.dims, params.tensors
    ids = _check_ids(ids, dims.vocab_size)
    cache = EmbedCache(variant, dims, ids, params=params)
    if variant is Variant.SUBWORD:
        return t["W"][ids].copy(), cache

    mapping = _check_mapping(mapping, dims)
    rows = mapping.table[ids]
    cache.byte_rows = rows
    m = ids.size
    if variant is Variant.SEB_AR:
        x = t["B"][rows].sum(axis=1)
        z1 = x @ t["W1"]
    elif variant is Variant.SEB_CR:
        x = t["B"][rows.reshape(-1)].reshape(m, dims.n * dims.d)
        z1 = x @ t["W1"]
    else:
        x = None
        z1 = t["W1"][co_rows(rows, dims.byte_vocab_size)].sum(axis=1)
    if dims.use_bias:
        z1 = z1 + t["b1"]
    a1 = np.maximum(z1, 0.0)
    out = a1 @ t["W2"]
    if dims.use_bias:
        out = out + t["b2"]
    cache.x, cache.z1, cache.a1 = x, z1, a1
    return out, cache


def embed_backward(cache: EmbedCache, upstream) -> dict[str, np.ndarray]:
    """Gradients of ``sum(upstream * E')`` with respect to every embedding tensor."""
    g = np.asarray(upstream, dtype=np.float64)
    dims, t = cache.dims, cache.params.tensors
    m = cache.ids.size
    if g.shape != (m, dims.d_out):
        raise DimensionError(f"upstream gradient has shape {g.shape}, expected {(m, dims.d_out)}")

    if cache.variant is Variant.SUBWORD:
        return {"W": scatter_add_rows(dims.vocab_size, cache.ids, g)}

    grads: dict[str, np.ndarray] = {}
    dW2 = cache.a1.T @ g
    dz1 = (g @ t["W2"].T) * (cache.z1 > 0)
    rows = cache.byte_rows
    if cache.variant is Variant.SEB_CO:
        dW1 = scatter_add_rows(
            t["W1"].shape[0], co_rows(rows, dims.byte_vocab_size).reshape(-1), np.repeat(dz1, dims.n, axis=0)
        )
    else:
        dW1 = cache.x.T @ dz1
        dx = dz1 @ t["W1"].T
        if cache.variant is Variant.SEB_AR:
            per_byte = np.repeat(dx, dims.n, axis=0)
        else:
            per_byte = dx.reshape(m * dims.n, dims.d)
        grads["B"] = scatter_add_rows(dims.byte_vocab_size, rows.reshape(-1), per_byte)
    grads["W1"] = dW1
    if dims.use_bias:
        grads["b1"] = dz1.sum(axis=0)
    grads["W2"] = dW2
    if dims.use_bias:
        grads["b2"] = g.sum(axis=0)
    return {name: grads[name] for name in dims.shapes(cache.variant)}


def embed_backward_snapshot(cache: EmbedCache, upstream, **meta) -> GradientSnapshot:
    return GradientSnapshot(cache.variant, cache.dims, embed_backward(cache, upstream), **meta)


def param_count(variant: Variant, dims: EmbeddingDims, include_biases: bool | None = None) -> int:
    """Number of embedding scalars.

    SUBWORD: ``V_w*d_out``; SEB_AR: ``V_b*d + d*h + h*d_out``; SEB_CR:
    ``V_b*d + n*d*h + h*d_out``; SEB_CO: ``n*V_b*h + h*d_out``; biases add
    ``h + d_out`` for the byte variants.  ``include_biases`` defaults to
    ``dims.use_bias``.
    """
    variant = Variant(variant)
    if include_biases is None:
        include_biases = dims.use_bias
    if variant is Variant.SUBWORD:
        return dims.vocab_size * dims.d_out
    total = dims.ffn_in_dim(variant) * dims.h + dims.h * dims.d_out
    if variant.has_byte_matrix:
        total += dims.byte_vocab_size * dims.d
    if include_biases:
        total += dims.h + dims.d_out
    return total


def embed_ids(params: EmbeddingParams, mapping: ByteMapping | None, ids: Iterable[int]) -> np.ndarray:
    return embed_forward(list(ids), mapping, params)[0]


def embedding_similarity(params: EmbeddingParams, mapping: ByteMapping | None, id_a: int, id_b: int) -> float:
    ea = embed_forward([id_a], mapping, params)[0][0]
    eb = embed_forward([id_b], mapping, params)[0][0]
    return cosine(ea, eb)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("degenerate embedding: zero-norm vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))
