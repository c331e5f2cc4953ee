"""Compare the four embedding variants: sizes, outputs and gradient sparsity."""

import numpy as np

from seb.embedding import (
    EmbeddingDims,
    Variant,
    co_rows,
    embed_backward,
    embed_forward,
    init_params,
    one_hot_concat,
    param_count,
)
from seb.mapping import build_mapping

VW = 50_000


def parameter_table():
    print("SEB_CO embedding parameters, h=1024, d_out=512 (millions)")
    print("   n   V_b=64  V_b=128  V_b=256")
    for n in (4, 8, 16):
        cells = [param_count(Variant.SEB_CO, EmbeddingDims(VW, 512, vb, n, h=1024)) / 1e6 for vb in (64, 128, 256)]
        print(f"  {n:2d}  " + "  ".join(f"{c:7.2f}" for c in cells))
    sub = param_count(Variant.SUBWORD, EmbeddingDims(VW, 512))
    print(f"a {VW}-row subword table with d_out=512 needs {sub / 1e6:.1f}M\n")


def main():
    parameter_table()

    dims = EmbeddingDims(VW, d_out=16, byte_vocab_size=256, n=8, d=16, h=32)
    mapping = build_mapping(VW, 256, 8, seed=1)
    ids = [17, 42, 42, 9000]
    upstream = np.random.default_rng(0).normal(size=(len(ids), dims.d_out))

    for variant in Variant:
        params = init_params(variant, dims, seed=0)
        out, cache = embed_forward(ids, mapping, params)
        grads = embed_backward(cache, upstream)
        name = "W" if variant is Variant.SUBWORD else ("B" if variant.has_byte_matrix else "W1")
        live = int(np.any(grads[name] != 0, axis=1).sum())
        print(f"{variant.value:8s} output {out.shape}, {params.num_scalars:>8d} scalars, "
              f"{live} of {grads[name].shape[0]} rows of d{name} non-zero")

    # the SEB_CO gather is the one-hot product written sparsely
    params = init_params(Variant.SEB_CO, dims, seed=0)
    out, _ = embed_forward(ids, mapping, params)
    dense = np.maximum(one_hot_concat(mapping.table[ids], 256) @ params["W1"], 0) @ params["W2"]
    print(f"\nSEB_CO gather vs explicit one-hot: max diff {np.abs(out - dense).max():.1e}")
    print("W1 rows touched by subword 17:", co_rows(mapping.table[[17]], 256)[0].tolist())


if __name__ == "__main__":
    main()
