"""Build a random subword-to-bytes mapping and look at how it behaves.

Each subword gets n byte values drawn with replacement; a repeat draw is
thrown away, so the table is injective.  With V_b=256 and n=8 there are
2^64 possible rows, which is why rejections almost never happen.
"""

import argparse
import tempfile
from pathlib import Path

import numpy as np

from seb.mapping import build_mapping, collision_probability, empirical_collision_rate, load_mapping, save_mapping


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--vocab-size", type=int, default=10_000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    m = build_mapping(args.vocab_size, byte_vocab_size=256, n=8, seed=args.seed)
    print(f"table shape {m.table.shape}, distinct rows {len(np.unique(m.table, axis=0))}")
    print("first three rows:")
    for i in range(3):
        print(f"  subword {i}: {m.table[i].tolist()}")

    print("\ncollision probability of two independent rows")
    for vb, n in [(16, 4), (128, 8), (256, 8)]:
        print(f"  V_b={vb:3d} n={n}: p={collision_probability(vb, n):.3g}")

    # with a tiny codomain the formula can be checked by brute counting
    rate = empirical_collision_rate(4, 2, 200_000, seed=args.seed)
    print(f"  V_b=4 n=2 empirical {rate:.4f} vs exact {1 / 16:.4f}")

    # a saturated codomain turns the mapping into a permutation
    perm = build_mapping(256, 256, 1, seed=args.seed).table[:, 0]
    print(f"\nV_w=V_b=256, n=1 gives a permutation: {sorted(perm.tolist()) == list(range(256))}")

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "map.sebm"
        save_mapping(m, path)
        print(f"saved {path.stat().st_size} bytes; reload equal: {load_mapping(path) == m}")


if __name__ == "__main__":
    main()
