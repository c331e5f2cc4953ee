"""Binary checkpoints for parameters, models and gradient snapshots.

Layout (little-endian)::

    magic "SEBP" | version u16 | kind u16 | variant u16
    V_w u32 | d_out u32 | V_b u32 | n u32 | d u32 | h u32 | use_bias u8
    client i32 | round i32 | batch_size u32          (zeros unless kind == GRAD)
    tensor count u16, then per tensor:
        name (u16 length + UTF-8) | ndim u8 | shape u32 * ndim | float64 data, row-major

A model checkpoint is a parameter checkpoint whose tensor list ends with the
``head_W`` and ``head_b`` section.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .embedding import EmbeddingDims, EmbeddingParams, GradientSnapshot, Variant
from .model import TaskModel

MAGIC = b"SEBP"
VERSION = 1
KIND_PARAMS, KIND_MODEL, KIND_GRAD = 0, 1, 2

_HEAD = struct.Struct("<4sHHHIIIIIIBiiI")


class CheckpointError(ValueError):
    pass


def _pack(kind: int, variant: Variant, dims: EmbeddingDims, tensors: dict, client=0, rnd=0, batch=0) -> bytes:
    parts = [
        _HEAD.pack(
            MAGIC, VERSION, kind, Variant(variant).tag,
            dims.vocab_size, dims.d_out, dims.byte_vocab_size, dims.n, dims.d, dims.h, int(dims.use_bias),
            client, rnd, batch,
        ),
        struct.pack("<H", len(tensors)),
    ]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        key = name.encode("utf-8")
        parts.append(struct.pack("<H", len(key)) + key + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def _unpack(data: bytes, path):
    if len(data) < _HEAD.size + 2:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, kind, vtag, vw, d_out, vb, n, d, h, bias, client, rnd, batch = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    if vtag >= len(Variant):
        raise CheckpointError(f"{path}: unknown variant tag {vtag}")
    dims = EmbeddingDims(vw, d_out, vb, n, d, h, bool(bias))
    off = _HEAD.size
    (count,) = struct.unpack_from("<H", data, off)
    off += 2
    tensors = {}
    try:
        for _ in range(count):
            (klen,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + klen].decode("utf-8")
            off += klen
            (ndim,) = struct.unpack_from("<B", data, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            nbytes = 8 * int(np.prod(shape, dtype=np.int64))
            if off + nbytes > len(data):
                raise CheckpointError(f"{path}: truncated tensor {name}")
            tensors[name] = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=off).reshape(shape).copy()
            off += nbytes
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated tensor table") from exc
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return kind, list(Variant)[vtag], dims, tensors, (client, rnd, batch)


def save_params(params: EmbeddingParams, path) -> None:
    Path(path).write_bytes(_pack(KIND_PARAMS, params.variant, params.dims, params.tensors))


def save_model(model: TaskModel, path) -> None:
    Path(path).write_bytes(_pack(KIND_MODEL, model.variant, model.dims, model.parameters()))


def save_snapshot(snapshot: GradientSnapshot, path) -> None:
    Path(path).write_bytes(
        _pack(KIND_GRAD, snapshot.variant, snapshot.dims, snapshot.grads,
              snapshot.client_id, snapshot.round, snapshot.batch_size)
    )


def load(path):
    """Load any checkpoint; returns EmbeddingParams, TaskModel or GradientSnapshot."""
    kind, variant, dims, tensors, (client, rnd, batch) = _unpack(Path(path).read_bytes(), path)
    if kind == KIND_GRAD:
        return GradientSnapshot(variant, dims, tensors, client_id=client, round=rnd, batch_size=batch)
    head = {k: tensors.pop(k) for k in ("head_W", "head_b") if k in tensors}
    try:
        emb = EmbeddingParams(variant, dims, tensors)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    if kind == KIND_PARAMS:
        return emb
    if kind == KIND_MODEL:
        if len(head) != 2:
            raise CheckpointError(f"{path}: model checkpoint lacks the head section")
        return TaskModel(emb, head["head_W"], head["head_b"])
    raise CheckpointError(f"{path}: unknown checkpoint kind {kind}")


def load_params(path) -> EmbeddingParams:
    obj = load(path)
    if isinstance(obj, TaskModel):
        return obj.embedding
    if not isinstance(obj, EmbeddingParams):
        raise CheckpointError(f"{path}: not a parameter checkpoint")
    return obj


def load_model(path) -> TaskModel:
    obj = load(path)
    if not isinstance(obj, TaskModel):
        raise CheckpointError(f"{path}: not a model checkpoint")
    return obj


def load_snapshot(path) -> GradientSnapshot:
    obj = load(path)
    if not isinstance(obj, GradientSnapshot):
        raise CheckpointError(f"{path}: not a gradient checkpoint")
    return obj
