"""Train the same classifier with subword and byte-based embeddings under FL.

A small synthetic two-class corpus is dealt to 20 clients.  Each round a
fraction of clients sends one mini-batch gradient and the server averages.
"""

import argparse
import time

from seb.embedding import EmbeddingDims, Variant
from seb.federated import FLConfig, train
from seb.mapping import build_mapping
from seb.text import LabeledCorpus, build_vocab, encode_corpus, generate_synthetic_corpus


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rounds", type=int, default=150)
    parser.add_argument("--participation", type=float, default=0.2)
    parser.add_argument("--seed", type=int, default=3)
    args = parser.parse_args()

    full = generate_synthetic_corpus(6000, 2, 2000, 20, seed=args.seed)
    train_c, test_c = LabeledCorpus(full.samples[:5000], 2), LabeledCorpus(full.samples[5000:], 2)
    vocab = build_vocab(train_c)
    train_set, test_set = encode_corpus(train_c, vocab), encode_corpus(test_c, vocab)
    mapping = build_mapping(len(vocab), 256, 8, seed=args.seed)
    dims = EmbeddingDims(len(vocab), d_out=32, byte_vocab_size=256, n=8, d=32, h=64)

    cfg = FLConfig(num_clients=20, rounds=args.rounds, learning_rate=2.0, batch_size=32,
                   participation_ratio=args.participation, seed=args.seed, eval_every=25)
    print(f"V_w={len(vocab)}, {cfg.clients_per_round} clients per round, {cfg.rounds} rounds")
    for variant in (Variant.SUBWORD, Variant.SEB_CO):
        start = time.perf_counter()
        _, logs = train(train_set, cfg, variant, mapping if variant.uses_mapping else None,
                        dims=dims, num_classes=2, eval_examples=test_set)
        curve = ", ".join(f"{log.accuracy:.3f}" for log in logs if log.accuracy == log.accuracy)
        print(f"{variant.value:8s} test accuracy by checkpoint: {curve}  ({time.perf_counter() - start:.1f} s)")


if __name__ == "__main__":
    main()
