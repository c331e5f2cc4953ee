"""FedSGD / FedAvg-style simulation with per-round client sampling.

Each round the server samples ``ceil(c * N)`` clients without replacement;
every sampled client computes one mini-batch gradient at the round-start
parameters, and the server applies ``theta <- theta - lr * agg(gradients)``
with ``agg`` either the plain sum or the mean.  Client order and batch
composition come from a stream keyed by ``(seed, round)``, so any round can
be replayed exactly.

With ``aggregation = SUM`` the update is unbounded in the number of sampled
clients; on the synthetic task, keep ``lr * clients_per_round`` below about
20 (``MEAN``: ``lr`` below about 20) for parameters to stay finite.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ConfigError, as_float, as_int, as_list, dump_kv, parse_kv
from .embedding import EmbeddingDims, GradientSnapshot, Variant
from .mapping import ByteMapping
from .model import Example, TaskModel, evaluate, forward_loss, backward, init_model
from .rng import TAG_INIT, TAG_PARTITION, TAG_ROUND, Stream


class Aggregation(str, enum.Enum):
    SUM = "SUM"
    MEAN = "MEAN"


class DivergenceError(RuntimeError):
    def __init__(self, round_index: int, detail: str = ""):
        self.round = round_index
        super().__init__(f"divergence at round {round_index}" + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class FLConfig:
    num_clients: int = 20
    rounds: int = 100
    learning_rate: float = 0.5
    batch_size: int = 32
    participation_ratio: float = 1.0
    aggregation: Aggregation = Aggregation.MEAN
    seed: int = 0
    attack_rounds: frozenset[int] = frozenset()
    eval_every: int = 1

    def __post_init__(self):
        object.__setattr__(self, "aggregation", Aggregation(getattr(self.aggregation, "value", self.aggregation).upper()))
        object.__setattr__(self, "attack_rounds", frozenset(int(r) for r in self.attack_rounds))
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.participation_ratio <= 1:
            raise ValueError("participation_ratio must be in (0, 1]")
        if self.eval_every < 0:
            raise ValueError("eval_every must be >= 0")

    @property
    def clients_per_round(self) -> int:
        # round() guards against 0.6 * 20 == 12.000000000000002
        return max(1, math.ceil(round(self.participation_ratio * self.num_clients, 9)))

    def to_kv(self) -> dict[str, object]:
        return {
            "num_clients": self.num_clients,
            "rounds": self.rounds,
            "learning_rate": repr(self.learning_rate),
            "batch_size": self.batch_size,
            "participation_ratio": repr(self.participation_ratio),
            "aggregation": self.aggregation,
            "seed": self.seed,
            "attack_rounds": self.attack_rounds,
            "eval_every": self.eval_every,
        }


def fl_config_from_kv(kv: dict[str, str], seed: int | None = None) -> FLConfig:
    args: dict[str, object] = {}
    for key in ("num_clients", "rounds", "batch_size", "seed", "eval_every"):
        if key in kv:
            args[key] = as_int(kv[key], key)
    for key in ("learning_rate", "participation_ratio"):
        if key in kv:
            args[key] = as_float(kv[key], key)
    if "aggregation" in kv:
        try:
            args["aggregation"] = Aggregation(kv["aggregation"].upper())
        except ValueError:
            raise ConfigError(f"aggregation: expected SUM or MEAN, got {kv['aggregation']!r}") from None
    if "attack_rounds" in kv:
        args["attack_rounds"] = frozenset(as_list(kv["attack_rounds"], "attack_rounds", int))
    if seed is not None:
        args["seed"] = seed
    try:
        return FLConfig(**args)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_fl_config(path) -> FLConfig:
    return fl_config_from_kv(parse_kv(Path(path).read_text(encoding="utf-8"), str(path)))


def save_fl_config(config: FLConfig, path) -> None:
    Path(path).write_text(dump_kv(config.to_kv()), encoding="utf-8")


@dataclass
class RoundLog:
    round: int
    client_ids: tuple[int, ...]
    loss: float
    accuracy: float
    grad_norm: float
    batch_indices: dict[int, tuple[int, ...]] = field(default_factory=dict, repr=False)
    snapshots: dict[int, GradientSnapshot] = field(default_factory=dict, repr=False)
    batches: dict[int, list[Example]] = field(default_factory=dict, repr=False)


def partition(examples: Sequence, num_clients: int, seed: int = 0) -> list[list]:
    """Shuffle and deal into ``num_clients`` shards whose sizes differ by at most one."""
    if num_clients <= 0:
        raise ValueError("number of clients must be positive")
    if len(examples) < num_clients:
        raise ValueError(f"{len(examples)} samples cannot fill {num_clients} clients")
    order = Stream(seed, TAG_PARTITION).permutation(len(examples))
    q, r = divmod(len(examples), num_clients)
    shards, pos = [], 0
    for c in range(num_clients):
        size = q + (1 if c < r else 0)
        shards.append([examples[i] for i in order[pos:pos + size]])
        pos += size
    return shards


def aggregate(grads: Sequence[dict[str, np.ndarray]], mode: Aggregation) -> dict[str, np.ndarray]:
    if not grads:
        raise ValueError("nothing to aggregate")
    total = {k: np.array(v, dtype=np.float64, copy=True) for k, v in grads[0].items()}
    for g in grads[1:]:
        for k in total:
            total[k] += g[k]
    if Aggregation(mode) is Aggregation.MEAN:
        k = len(grads)
        total = {name: v / k for name, v in total.items()}
    return total


def _global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values())))


def fed_round(
    model: TaskModel,
    clients: Sequence[Sequence[Example]],
    config: FLConfig,
    t: int,
    mapping: ByteMapping | None = None,
    prng: Stream | None = None,
    eval_examples: Sequence[Example] | None = None,
):
    """One communication round; returns ``(new_model, RoundLog)``."""
    if not clients:
        raise ValueError("no clients")
    prng = prng or Stream(config.seed, TAG_ROUND, t)
    sampled = prng.sample(len(clients), min(config.clients_per_round, len(clients)))
    keep = t in config.attack_rounds
    log = RoundLog(t, tuple(sampled), float("nan"), float("nan"), float("nan"))

    grads, batches = [], []
    for cid in sampled:
        shard = clients[cid]
        idx = prng.sample(len(shard), min(config.batch_size, len(shard)))
        batch = [shard[i] for i in idx]
        with np.errstate(all="ignore"):
            _, cache = forward_loss(model, batch, mapping)
            try:
                snap = backward(model, cache, client_id=cid, round=t)
            except ValueError as exc:
                raise DivergenceError(t, str(exc)) from exc
        grads.append(snap.grads)
        batches.append(batch)
        log.batch_indices[cid] = tuple(idx)
        if keep:
            log.snapshots[cid] = snap
            log.batches[cid] = batch

    agg = aggregate(grads, config.aggregation)
    with np.errstate(all="ignore"):
        log.grad_norm = _global_norm(agg)
        if not math.isfinite(log.grad_norm):
            raise DivergenceError(t, "non-finite gradient")
        try:
            model = model.apply_gradient(agg, config.learning_rate)
        except ValueError as exc:
            raise DivergenceError(t, str(exc)) from exc
        log.loss = float(np.mean([forward_loss(model, b, mapping)[0] for b in batches]))
    if not math.isfinite(log.loss):
        raise DivergenceError(t, "non-finite loss")
    last = t == config.rounds - 1
    periodic = config.eval_every > 0 and (t + 1) % config.eval_every == 0
    if eval_examples is not None and (periodic or last):
        log.accuracy = evaluate(model, eval_examples, mapping)
    return model, log


def train(
    examples: Sequence[Example],
    config: FLConfig,
    variant: Variant,
    mapping: ByteMapping | None = None,
    *,
    dims: EmbeddingDims,
    num_classes: int,
    init_scale: float = 0.1,
    eval_examples: Sequence[Example] | None = None,
    log_path=None,
    model: TaskModel | None = None,
):
    """Partition, initialise and run ``config.rounds`` rounds; returns ``(model, logs)``."""
    if model is None:
        model = init_model(variant, dims, num_classes, seed=_init_seed(config.seed), scale=init_scale)
    logs: list[RoundLog] = []
    if config.rounds == 0:
        if log_path is not None:
            write_round_log(logs, log_path)
        return model, logs
    clients = partition(list(examples), config.num_clients, config.seed)
    for t in range(config.rounds):
        model, log = fed_round(model, clients, config, t, mapping, eval_examples=eval_examples)
        logs.append(log)
    if log_path is not None:
        write_round_log(logs, log_path)
    return model, logs


def _init_seed(seed: int) -> int:
    return int(Stream(seed, TAG_INIT).raw(1)[0])


ROUND_LOG_FIELDS = ("round", "client_ids", "loss", "accuracy", "grad_norm")


def write_round_log(logs: Sequence[RoundLog], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(ROUND_LOG_FIELDS)
        for log in logs:
            w.writerow([
                log.round,
                ";".join(map(str, log.client_ids)),
                repr(log.loss),
                repr(log.accuracy),
                repr(log.grad_norm),
            ])


def read_round_log(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    for row in rows:
        row["round"] = int(row["round"])
        row["client_ids"] = tuple(int(x) for x in row["client_ids"].split(";") if x)
        for k in ("loss", "accuracy", "grad_norm"):
            row[k] = float(row[k])
    return rows
