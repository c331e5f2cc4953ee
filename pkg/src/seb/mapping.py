"""Randomized injective subword -> byte-sequence mapping."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import PRNG_ID, TAG_MAPPING, Stream

MAGIC = b"SEBM"
VERSION = 1
DEFAULT_VB = 256
DEFAULT_N = 8
_HEADER = struct.Struct("<4sHHHIQ")


class MappingInfeasible(ValueError):
    pass


class MappingFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ByteMapping:
    """Row ``i`` of ``table`` is the byte sequence of subword id ``i``."""

    table: np.ndarray
    byte_vocab_size: int
    seed: int
    prng_id: str = PRNG_ID
    _rows: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        table = np.ascontiguousarray(self.table, dtype=np.int64)
        if table.ndim != 2 or table.shape[1] < 1:
            raise ValueError(f"table must be 2-D with at least one column, got shape {table.shape}")
        if not 2 <= self.byte_vocab_size <= 256:
            raise ValueError(f"byte vocabulary size must be in [2, 256], got {self.byte_vocab_size}")
        if table.size and (table.min() < 0 or table.max() >= self.byte_vocab_size):
            raise ValueError("byte values outside [0, V_b)")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)
        rows = {row.tobytes(): i for i, row in enumerate(table.astype(np.uint8))}
        if len(rows) != table.shape[0]:
            raise ValueError("mapping is not injective: duplicate byte rows")
        object.__setattr__(self, "_rows", rows)

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]

    @property
    def bytes_per_subword(self) -> int:
        return self.table.shape[1]

    def __eq__(self, other):
        if not isinstance(other, ByteMapping):
            return NotImplemented
        return (
            self.byte_vocab_size == other.byte_vocab_size
            and self.seed == other.seed
            and self.prng_id == other.prng_id
            and np.array_equal(self.table, other.table)
        )

    def __hash__(self):
        return hash((self.table.tobytes(), self.byte_vocab_size, self.seed, self.prng_id))

    def lookup(self, subword_id: int) -> np.ndarray:
        return lookup(self, subword_id)

    def inverse(self, row) -> int | None:
        """Subword id whose byte row equals ``row``, or None."""
        return self._rows.get(np.asarray(row, dtype=np.uint8).tobytes())


def build_mapping(vocab_size: int, byte_vocab_size: int = DEFAULT_VB, n: int = DEFAULT_N, seed: int = 0) -> ByteMapping:
    """Assign each subword id, in id order, a fresh uniform byte row, resampling duplicates.

    Byte values are consumed from one seeded stream: candidate row ``k`` is
    stream values ``k*n .. k*n + n - 1``, and a candidate equal to an already
    accepted row is discarded.  ``vocab_size`` may also be a vocabulary object.
    """
    if not isinstance(vocab_size, int):
        vocab_size = len(vocab_size)
    if not 2 <= byte_vocab_size <= 256:
        raise ValueError(f"byte vocabulary size must be in [2, 256], got {byte_vocab_size}")
    if n < 1:
        raise ValueError("n must be >= 1")
    capacity = byte_vocab_size ** n
    if vocab_size > capacity:
        raise MappingInfeasible(
            f"mapping infeasible: V_w={vocab_size} > V_b^n={byte_vocab_size}^{n}={capacity}"
        )

    stream = Stream(seed, TAG_MAPPING)
    budget = 1000 * vocab_size
    table = np.empty((vocab_size, n), dtype=np.int64)
    seen: set[bytes] = set()
    accepted = rejected = 0
    while accepted < vocab_size:
        want = vocab_size - accepted
        candidates = stream.integers(byte_vocab_size, want * n).reshape(want, n)
        for row in candidates:
            key = row.astype(np.uint8).tobytes()
            if key in seen:
                rejected += 1
                if rejected > budget:
                    raise MappingInfeasible(
                        f"rejection budget exceeded after {rejected} resamples "
                        f"(V_w={vocab_size}, V_b={byte_vocab_size}, n={n})"
                    )
                continue
            seen.add(key)
            table[accepted] = row
            accepted += 1
    return ByteMapping(table, byte_vocab_size, seed)


def collision_probability(byte_vocab_size: int, n: int, warn: bool = True) -> float:
    """Chance that two independently drawn rows coincide, ``1 / V_b**n``.

    Returns 0.0 (with a RuntimeWarning when ``warn``) if the value underflows
    double precision.
    """
    if byte_vocab_size < 2 or n < 1:
        raise ValueError("need V_b >= 2 and n >= 1")
    p = 1 / (byte_vocab_size ** n)  # exact integer power, correctly rounded division
    if p == 0.0 and warn:
        warnings.warn(f"1/{byte_vocab_size}^{n} underflows float64; returning 0.0", RuntimeWarning)
    return p


def empirical_collision_rate(byte_vocab_size: int, n: int, trials: int, seed: int = 0) -> float:
    """Fraction of independent row pairs that coincide, without rejection."""
    stream = Stream(seed, TAG_MAPPING, 1)
    a = stream.integers(byte_vocab_size, trials * n).reshape(trials, n)
    b = stream.integers(byte_vocab_size, trials * n).reshape(trials, n)
    return float(np.all(a == b, axis=1).mean())


def lookup(mapping: ByteMapping, subword_id: int) -> np.ndarray:
    if not 0 <= subword_id < mapping.vocab_size:
        raise IndexError(f"subword id {subword_id} outside [0, {mapping.vocab_size})")
    return mapping.table[subword_id]


def save_mapping(mapping: ByteMapping, path) -> None:
    prng = mapping.prng_id.encode("utf-8")
    header = _HEADER.pack(
        MAGIC, VERSION, mapping.byte_vocab_size, mapping.bytes_per_subword, mapping.vocab_size, mapping.seed
    )
    body = mapping.table.astype(np.uint8).tobytes(order="C")
    Path(path).write_bytes(header + struct.pack("<H", len(prng)) + prng + body)


def load_mapping(path) -> ByteMapping:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + 2:
        raise MappingFormatError(f"{path}: truncated header")
    magic, version, vb, n, vw, seed = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MappingFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise MappingFormatError(f"{path}: unsupported version {version}")
    if not 2 <= vb <= 256:
        raise MappingFormatError(f"{path}: V_b={vb} outside [2, 256]")
    if n < 1:
        raise MappingFormatError(f"{path}: n must be >= 1")
    off = _HEADER.size
    (plen,) = struct.unpack_from("<H", data, off)
    off += 2
    if len(data) < off + plen:
        raise MappingFormatError(f"{path}: truncated prng id")
    prng_id = data[off:off + plen].decode("utf-8")
    off += plen
    body = data[off:]
    if len(body) != vw * n:
        raise MappingFormatError(f"{path}: body has {len(body)} bytes, expected {vw * n}")
    table = np.frombuffer(body, dtype=np.uint8).reshape(vw, n).astype(np.int64)
    try:
        return ByteMapping(table, vb, seed, prng_id)
    except ValueError as exc:
        raise MappingFormatError(f"{path}: {exc}") from exc
