"""How many subwords a set of bytes reaches, and what single sentences look like."""

import numpy as np

from seb.attack import batch_statistics, coverage_curve
from seb.mapping import build_mapping
from seb.text import zipf_sentences

VW = 50_000


def main():
    mapping = build_mapping(VW, 256, 8, seed=0)
    print("subwords sharing at least one byte with k random byte values")
    for k, covered in coverage_curve(mapping, [4, 8, 16, 32, 64, 120], trials=10, seed=0):
        print(f"  k={k:3d}: {covered:9.1f} of {VW} ({covered / VW:.1%})")

    batches = [[s] for s in zipf_sentences(VW, 200, 25, seed=1)]
    stats = batch_statistics(batches, mapping)
    for field in ("tokens", "unique_subwords", "unique_bytes"):
        values = np.array([getattr(s, field) for s in stats])
        print(f"{field:>16}: mean {values.mean():6.1f}, min {values.min():3d}, max {values.max():3d}")
    print("one sentence already uses about half of the 256 byte values")


if __name__ == "__main__":
    main()
