"""Corpora, vocabularies and tokenization."""

from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import TAG_CORPUS, TAG_SENTENCES, Stream

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<bos>", "<eos>"
SPECIALS = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = range(4)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class SubwordVocab:
    tokens: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != SPECIALS:
            missing = [s for s in SPECIALS if s not in self.tokens]
            if missing:
                raise VocabError(f"missing special tokens: {' '.join(missing)}")
            raise VocabError("special tokens must occupy ids 0..3 as <pad> <unk> <bos> <eos>")
        index: dict[str, int] = {}
        for i, tok in enumerate(self.tokens):
            if tok in index:
                raise VocabError(f"duplicate token {tok!r} at ids {index[tok]} and {i}")
            index[tok] = i
        object.__setattr__(self, "index", index)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def specials(self) -> dict[str, int]:
        return {tok: i for i, tok in enumerate(SPECIALS)}

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


@dataclass(frozen=True)
class LabeledCorpus:
    samples: tuple[tuple[str, int], ...]
    num_classes: int

    def __post_init__(self):
        if not self.samples:
            raise ValueError("empty corpus")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        for text, label in self.samples:
            if not 0 <= label < self.num_classes:
                raise ValueError(f"label {label} outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.samples], dtype=np.int64)


def split_words(text: str) -> list[str]:
    """Lowercase and split on whitespace, keeping punctuation as separate tokens."""
    return _TOKEN_RE.findall(text.lower())


def build_vocab(corpus: LabeledCorpus, min_freq: int = 1, max_size: int = 50_000) -> SubwordVocab:
    if not corpus.samples:
        raise ValueError("empty corpus")
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    if max_size < len(SPECIALS):
        raise ValueError(f"max_size must be >= {len(SPECIALS)}")
    counts = Counter(w for text, _ in corpus.samples for w in split_words(text))
    for s in SPECIALS:
        counts.pop(s, None)
    kept = sorted((w for w, c in counts.items() if c >= min_freq), key=lambda w: (-counts[w], w))
    return SubwordVocab(SPECIALS + tuple(kept[: max_size - len(SPECIALS)]))


def tokenize(text: str, vocab: SubwordVocab) -> list[int]:
    return [vocab.id_of(w) for w in split_words(text)]


def encode_corpus(corpus: LabeledCorpus, vocab: SubwordVocab) -> list[tuple[tuple[int, ...], int]]:
    return [(tuple(tokenize(text, vocab)), label) for text, label in corpus.samples]


def save_vocab(vocab: SubwordVocab, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for tok in vocab.tokens:
            f.write(tok + "\n")


def load_vocab(path) -> SubwordVocab:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return SubwordVocab(tuple(lines))


def save_corpus(corpus: LabeledCorpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["label", "text"])
        for text, label in corpus.samples:
            writer.writerow([label, text])


def load_corpus(path, num_classes: int | None = None) -> LabeledCorpus:
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or set(reader.fieldnames) < {"label", "text"}:
            raise ValueError(f"{path}: expected a header with 'label' and 'text' columns")
        samples = tuple((row["text"], int(row["label"])) for row in reader)
    if not samples:
        raise ValueError("empty corpus")
    if num_classes is None:
        num_classes = max(label for _, label in samples) + 1
    return LabeledCorpus(samples, num_classes)


def _zipf_cdf(size: int, exponent: float) -> np.ndarray:
    return np.cumsum(1.0 / np.arange(1, size + 1, dtype=np.float64) ** exponent)


def generate_synthetic_corpus(
    num_samples: int,
    num_classes: int,
    vocab_size: int,
    tokens_per_sample: int,
    seed: int,
    indicative_prob: float = 0.25,
) -> LabeledCorpus:
    """Draw a labelled corpus over word types ``w0 .. w{vocab_size-1}``.

    Background words follow a Zipf(1) law shared by all classes.  Each class
    also owns a disjoint block of indicative words (picked at random outside
    the most frequent tenth of the ranking), and each position draws from the class block with
    probability ``indicative_prob``.
    """
    if min(num_samples, num_classes, vocab_size, tokens_per_sample) < 1:
        raise ValueError("all counts must be >= 1")
    stream = Stream(seed, TAG_CORPUS)
    width = len(str(vocab_size - 1))
    words = [f"w{i:0{width}d}" for i in range(vocab_size)]

    per_class = max(1, vocab_size // (10 * num_classes))
    start = min(vocab_size // 10, max(0, vocab_size - per_class * num_classes))
    order = stream.permutation(vocab_size - start)
    blocks = [
        np.array([start + order[(c * per_class + k) % len(order)] for k in range(per_class)])
        for c in range(num_classes)
    ]

    cdf = _zipf_cdf(vocab_size, 1.0)
    labels = stream.integers(num_classes, num_samples)
    background = stream.categorical(cdf, num_samples * tokens_per_sample).reshape(num_samples, tokens_per_sample)
    use_class = stream.uniform(0.0, 1.0, (num_samples, tokens_per_sample)) < indicative_prob
    pick = stream.integers(per_class, num_samples * tokens_per_sample).reshape(num_samples, tokens_per_sample)

    samples = []
    for i in range(num_samples):
        ids = np.where(use_class[i], blocks[labels[i]][pick[i]], background[i])
        samples.append((" ".join(words[j] for j in ids), int(labels[i])))
    return LabeledCorpus(tuple(samples), num_classes)


def zipf_sentences(
    vocab_size: int,
    num_sentences: int,
    tokens_per_sentence: int,
    seed: int,
    exponent: float = 1.0,
) -> list[list[int]]:
    """Token-id sentences with Zipf-distributed ids over the non-special vocabulary.

    Id ``4 + r`` has frequency rank ``r``.  Sentence lengths are drawn
    uniformly from ``[tokens_per_sentence // 2, 3 * tokens_per_sentence // 2]``
    so the mean length is ``tokens_per_sentence``.
    """
    usable = vocab_size - len(SPECIALS)
    if usable < 1:
        raise ValueError("vocabulary has no room beyond the special tokens")
    stream = Stream(seed, TAG_SENTENCES)
    cdf = _zipf_cdf(usable, exponent)
    lo, hi = max(1, tokens_per_sentence // 2), max(1, 3 * tokens_per_sentence // 2)
    lengths = lo + stream.integers(hi - lo + 1, num_sentences)
    ids = stream.categorical(cdf, int(lengths.sum())) + len(SPECIALS)
    out, pos = [], 0
    for length in lengths:
        out.append(ids[pos:pos + length].tolist())
        pos += length
    return out
