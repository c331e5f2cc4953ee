"""Token extraction from embedding gradients, and the defense statistics around it.

The attacker sees one client's :class:`GradientSnapshot` plus the public
mapping.  For the subword baseline, any row of the embedding-matrix gradient
that is non-zero names a token in the batch.  For byte-based embeddings the
non-zero rows only name byte values (or, for SEB_CO, position/byte pairs);
those are expanded back to subword candidates under one of two rules:

* ``LOOSE_ANY``: a subword is a candidate if any of its units was extracted.
* ``STRICT_ALL``: a subword is a candidate only if all its units were.

Only distinct units are visible in gradients, never their multiplicities;
reports carry ``num_units`` to record exactly what the attacker learned.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .embedding import GradientSnapshot, Variant
from .mapping import ByteMapping
from .model import clean_sequence
from .rng import TAG_COVERAGE, Stream

DEFAULT_EPS = 1e-12


class Rule(str, enum.Enum):
    LOOSE_ANY = "LOOSE_ANY"
    STRICT_ALL = "STRICT_ALL"
    DIRECT = "DIRECT"  # subword baseline: rows name tokens directly


class Granularity(str, enum.Enum):
    SUBWORD = "SUBWORD"
    BYTE = "BYTE"
    POSITION_BYTE = "POSITION_BYTE"


class AttackError(ValueError):
    pass


def extract_subword_candidates(snapshot: GradientSnapshot, eps: float = DEFAULT_EPS) -> set[int]:
    """Ids whose embedding-gradient row has max-abs entry above ``eps``."""
    if snapshot.variant is not Variant.SUBWORD:
        raise AttackError(f"subword extraction needs a SUBWORD snapshot, got {snapshot.variant.value}")
    row_max = np.abs(snapshot["W"]).max(axis=1) if snapshot["W"].size else np.zeros(0)
    return set(np.flatnonzero(row_max > eps).tolist())


def extract_byte_candidates(
    snapshot: GradientSnapshot,
    eps: float = DEFAULT_EPS,
    granularity: Granularity = Granularity.BYTE,
) -> set:
    """Byte values (or ``(position, byte)`` pairs) whose gradient rows are non-negligible."""
    granularity = Granularity(granularity)
    variant, dims = snapshot.variant, snapshot.dims
    if variant is Variant.SUBWORD:
        raise AttackError("byte extraction needs a byte-based snapshot")
    if granularity is Granularity.SUBWORD:
        raise AttackError("use extract_subword_candidates for SUBWORD granularity")
    if variant.has_byte_matrix:
        if granularity is Granularity.POSITION_BYTE:
            raise AttackError(f"{variant.value} has no positional one-hot structure; use BYTE granularity")
        row_max = np.abs(snapshot["B"]).max(axis=1)
        return set(np.flatnonzero(row_max > eps).tolist())
    # SEB_CO: W1 row j * V_b + b belongs to byte b at position j
    hit = (np.abs(snapshot["W1"]).max(axis=1) > eps).reshape(dims.n, dims.byte_vocab_size)
    if granularity is Granularity.POSITION_BYTE:
        return {(int(j), int(b)) for j, b in zip(*np.nonzero(hit))}
    return set(np.flatnonzero(hit.any(axis=0)).tolist())


def _unit_hits(extracted: Iterable, mapping: ByteMapping) -> np.ndarray:
    """Boolean ``V_w x n`` matrix: is unit ``(j, table[i, j])`` in the extracted set."""
    table = mapping.table
    units = list(extracted)
    if units and isinstance(units[0], tuple):
        grid = np.zeros((mapping.bytes_per_subword, mapping.byte_vocab_size), dtype=bool)
        for j, b in units:
            grid[j, b] = True
        return grid[np.arange(table.shape[1]), table]
    mask = np.zeros(mapping.byte_vocab_size, dtype=bool)
    if units:
        mask[np.asarray(units, dtype=np.int64)] = True
    return mask[table]


def expand_candidates(extracted: Iterable, mapping: ByteMapping, rule: Rule = Rule.LOOSE_ANY) -> set[int]:
    """Subword ids consistent with the extracted units under ``rule``."""
    hits = _unit_hits(extracted, mapping)
    rule = Rule(rule)
    if rule is Rule.LOOSE_ANY:
        keep = hits.any(axis=1)
    elif rule is Rule.STRICT_ALL:
        keep = hits.all(axis=1)
    else:
        raise AttackError("expansion rule must be LOOSE_ANY or STRICT_ALL")
    return set(np.flatnonzero(keep).tolist())


def prune_count(ratio: float, numel: int) -> int:
    # round() first so 0.9 * 10 counts as 9, not 8.999...
    return min(numel, math.floor(round(ratio * numel, 9)))


def prune_array(arr: np.ndarray, ratio: float) -> np.ndarray:
    """Zero the ``floor(ratio * size)`` smallest-magnitude entries; ties go to lower flat index."""
    out = np.array(arr, dtype=np.float64, copy=True)
    k = prune_count(ratio, out.size)
    if k:
        flat = out.reshape(-1)
        flat[np.argsort(np.abs(flat), kind="stable")[:k]] = 0.0
    return out


def gradient_prune(snapshot: GradientSnapshot, ratio: float) -> GradientSnapshot:
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("prune ratio must be in [0, 1]")
    return snapshot.with_grads({name: prune_array(g, ratio) for name, g in snapshot.grads.items()})


def precision_recall(candidates: set, truth: set) -> tuple[float, float]:
    hit = len(candidates & truth)
    precision = hit / len(candidates) if candidates else 0.0
    recall = hit / len(truth) if truth else 0.0
    return precision, recall


# ---------------------------------------------------------------------------
# ROUGE
# ---------------------------------------------------------------------------


def _ngrams(tokens: Sequence, n: int) -> dict:
    counts: dict = {}
    for i in range(len(tokens) - n + 1):
        key = tuple(tokens[i:i + n])
        counts[key] = counts.get(key, 0) + 1
    return counts


def _f1(overlap: int, hyp_total: int, ref_total: int) -> float:
    if overlap == 0:
        return 0.0
    p, r = overlap / hyp_total, overlap / ref_total
    return 2 * p * r / (p + r)


def rouge_n(hyp: Sequence, ref: Sequence, n: int) -> float:
    h, r = _ngrams(hyp, n), _ngrams(ref, n)
    overlap = sum(min(c, r[g]) for g, c in h.items() if g in r)
    return _f1(overlap, sum(h.values()), sum(r.values()))


def lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_scores(candidate: Sequence, reference: Sequence) -> tuple[float, float, float]:
    """ROUGE-1, ROUGE-2 and ROUGE-L F1 over token sequences, no stemming.

    Two empty sequences score 1.0 on all three; otherwise an order with no
    n-grams on either side scores 0.0.
    """
    candidate, reference = list(candidate), list(reference)
    if not candidate and not reference:
        return 1.0, 1.0, 1.0
    lcs = lcs_length(candidate, reference)
    return (
        rouge_n(candidate, reference, 1),
        rouge_n(candidate, reference, 2),
        _f1(lcs, len(candidate), len(reference)),
    )


# ---------------------------------------------------------------------------
# Coverage and batch statistics
# ---------------------------------------------------------------------------


def covered_count(byte_set: Iterable[int], mapping: ByteMapping, rule: Rule = Rule.LOOSE_ANY) -> int:
    return len(expand_candidates(set(byte_set), mapping, rule))


def coverage_curve(
    mapping: ByteMapping,
    byte_counts: Sequence[int],
    trials: int = 100,
    seed: int = 0,
    rule: Rule = Rule.LOOSE_ANY,
) -> list[tuple[int, float]]:
    """Mean number of subwords covered by ``trials`` random ``k``-subsets of byte values, per ``k``."""
    stream = Stream(seed, TAG_COVERAGE)
    vb = mapping.byte_vocab_size
    out = []
    for k in byte_counts:
        if not 0 <= k <= vb:
            raise ValueError(f"byte count {k} outside [0, {vb}]")
        total = 0
        for _ in range(trials):
            mask = np.zeros(vb, dtype=bool)
            mask[stream.sample(vb, k)] = True
            hits = mask[mapping.table]
            total += int((hits.any(axis=1) if Rule(rule) is Rule.LOOSE_ANY else hits.all(axis=1)).sum())
        out.append((int(k), total / trials if trials else float("nan")))
    return out


def exact_coverage(mapping: ByteMapping, k: int, rule: Rule = Rule.LOOSE_ANY) -> float:
    """Mean coverage over every ``k``-subset of byte values (small ``V_b`` only)."""
    counts = [covered_count(c, mapping, rule) for c in combinations(range(mapping.byte_vocab_size), k)]
    return float(np.mean(counts))


@dataclass(frozen=True)
class BatchStats:
    tokens: int
    unique_subwords: int
    unique_bytes: int


def batch_statistics(batches: Sequence[Sequence[Sequence[int]]], mapping: ByteMapping) -> list[BatchStats]:
    """Token count, unique subwords and unique byte values of each batch of id sequences."""
    out = []
    for batch in batches:
        ids = np.concatenate([np.asarray(s, dtype=np.int64) for s in batch]) if batch else np.zeros(0, np.int64)
        uniq = np.unique(ids)
        out.append(BatchStats(int(ids.size), int(uniq.size), int(np.unique(mapping.table[uniq]).size)))
    return out


def write_batch_statistics(stats: Sequence[BatchStats], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["batch", "tokens", "unique_subwords", "unique_bytes"])
        for i, s in enumerate(stats):
            w.writerow([i, s.tokens, s.unique_subwords, s.unique_bytes])


def histogram_rows(stats: Sequence[BatchStats], bin_width: int = 10) -> list[tuple[str, int, int, int]]:
    rows = []
    for metric in ("tokens", "unique_subwords", "unique_bytes"):
        values = np.array([getattr(s, metric) for s in stats], dtype=np.int64)
        if values.size == 0:
            continue
        for lo in range(int(values.min()) // bin_width * bin_width, int(values.max()) + 1, bin_width):
            rows.append((metric, lo, lo + bin_width, int(((values >= lo) & (values < lo + bin_width)).sum())))
    return rows


def write_histogram(stats: Sequence[BatchStats], path, bin_width: int = 10) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["metric", "bin_low", "bin_high", "count"])
        w.writerows(histogram_rows(stats, bin_width))


def write_coverage(curve: Sequence[tuple[int, float]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["bytes", "mean_covered_subwords"])
        for k, v in curve:
            w.writerow([k, repr(v)])


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


@dataclass
class AttackConfig:
    rules: tuple[Rule, ...] = (Rule.LOOSE_ANY, Rule.STRICT_ALL)
    granularities: tuple[Granularity, ...] = (Granularity.BYTE, Granularity.POSITION_BYTE)
    prune_ratios: tuple[float, ...] = (0.0,)
    epsilon: float = DEFAULT_EPS
    rouge: bool = True

    def __post_init__(self):
        self.rules = tuple(Rule(r) for r in self.rules)
        self.granularities = tuple(Granularity(g) for g in self.granularities)
        self.prune_ratios = tuple(float(r) for r in self.prune_ratios)


@dataclass
class AttackReport:
    round: int
    client: int
    rule: Rule
    granularity: Granularity
    prune_ratio: float
    true_token_ids: set[int]
    candidate_ids: set[int]
    extracted_units: set
    precision: float
    recall: float
    candidate_fraction: float
    rouge1: float = float("nan")
    rouge2: float = float("nan")
    rougeL: float = float("nan")
    num_units: int = field(default=0)

    CSV_FIELDS = (
        "round", "client", "rule", "granularity", "prune_ratio",
        "precision", "recall", "candidate_fraction", "rouge1", "rouge2", "rougeL",
    )

    def csv_row(self) -> list:
        return [
            self.round, self.client, self.rule.value, self.granularity.value, repr(self.prune_ratio),
            repr(self.precision), repr(self.recall), repr(self.candidate_fraction),
            repr(self.rouge1), repr(self.rouge2), repr(self.rougeL),
        ]

    def to_json(self) -> dict:
        d = asdict(self)
        d["rule"] = self.rule.value
        d["granularity"] = self.granularity.value
        d["true_token_ids"] = sorted(self.true_token_ids)
        d["candidate_ids"] = sorted(self.candidate_ids)
        d["extracted_units"] = sorted([list(u) if isinstance(u, tuple) else u for u in self.extracted_units],
                                      key=lambda u: (u if isinstance(u, list) else [u]))
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def naive_reconstruction(candidates: set[int], reference_length: int) -> list[int]:
    """Candidates in extraction (ascending id) order, cut to the reference length.

    A deliberately weak stand-in for language-model decoding; its ROUGE is a
    lower bound on what a stronger attacker achieves with the same candidates.
    """
    return sorted(candidates)[:reference_length]


def attack_snapshot(
    snapshot: GradientSnapshot,
    batch_sequences: Sequence[Sequence[int]],
    mapping: ByteMapping | None,
    config: AttackConfig,
    round_index: int | None = None,
    client: int | None = None,
) -> list[AttackReport]:
    """Extract, expand and score one snapshot at every configured prune ratio, rule and granularity."""
    # the model drops <pad> and turns an empty sequence into <unk>; score against what it saw
    reference = [i for seq in batch_sequences for i in clean_sequence(seq)]
    truth = set(reference)
    vocab_size = snapshot.dims.vocab_size
    rnd = snapshot.round if round_index is None else round_index
    cid = snapshot.client_id if client is None else client
    reports = []
    for ratio in config.prune_ratios:
        snap = gradient_prune(snapshot, ratio) if ratio > 0 else snapshot
        if snapshot.variant is Variant.SUBWORD:
            cands = extract_subword_candidates(snap, config.epsilon)
            combos = [(Rule.DIRECT, Granularity.SUBWORD, cands, cands)]
        else:
            if mapping is None:
                raise AttackError("byte-based snapshots need the mapping")
            combos = []
            for gran in config.granularities:
                if gran is Granularity.SUBWORD:
                    continue
                if gran is Granularity.POSITION_BYTE and snapshot.variant is not Variant.SEB_CO:
                    continue
                units = extract_byte_candidates(snap, config.epsilon, gran)
                for rule in config.rules:
                    if rule is Rule.DIRECT:
                        continue
                    combos.append((rule, gran, units, expand_candidates(units, mapping, rule)))
        for rule, gran, units, cands in combos:
            p, r = precision_recall(cands, truth)
            rep = AttackReport(
                round=rnd, client=cid, rule=rule, granularity=gran, prune_ratio=ratio,
                true_token_ids=truth, candidate_ids=cands, extracted_units=set(units),
                precision=p, recall=r, candidate_fraction=len(cands) / vocab_size if vocab_size else 0.0,
                num_units=len(units),
            )
            if config.rouge:
                rep.rouge1, rep.rouge2, rep.rougeL = rouge_scores(
                    naive_reconstruction(cands, len(reference)), reference
                )
            reports.append(rep)
    return reports


def run_attack(round_logs, mapping: ByteMapping | None, config: AttackConfig | None = None) -> list[AttackReport]:
    """Attack every stored snapshot of every round log, in (round, client) order."""
    config = config or AttackConfig()
    reports = []
    for log in round_logs:
        for cid in sorted(log.snapshots):
            seqs = [ids for ids, _ in log.batches[cid]]
            reports.extend(attack_snapshot(log.snapshots[cid], seqs, mapping, config, log.round, cid))
    return reports


def write_reports_csv(reports: Sequence[AttackReport], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(AttackReport.CSV_FIELDS)
        for rep in reports:
            w.writerow(rep.csv_row())


def write_report_json(report: AttackReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
