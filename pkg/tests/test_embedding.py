import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradcheck import numeric_grads, relative_error
from seb.embedding import (
    DimensionError,
    EmbeddingDims,
    EmbeddingParams,
    Variant,
    co_rows,
    cosine,
    embed_backward,
    embed_forward,
    embedding_similarity,
    init_params,
    one_hot_concat,
    param_count,
    scatter_add_rows,
)
from seb.mapping import build_mapping

ALL = list(Variant)


def tiny(variant, seed, bias=None):
    """A random tiny instance: m <= 4, d <= 8, h <= 8."""
    rng = np.random.default_rng(seed)
    vw = int(rng.integers(5, 12))
    vb = int(rng.integers(2, 9))
    n = int(rng.integers(1, 4))
    while vb ** n < vw:
        n += 1
    dims = EmbeddingDims(
        vw, d_out=int(rng.integers(1, 6)), byte_vocab_size=vb, n=n,
        d=int(rng.integers(1, 9)), h=int(rng.integers(1, 9)),
        use_bias=bool(rng.integers(2)) if bias is None else bias,
    )
    params = init_params(variant, dims, seed=seed, scale=0.5)
    # give biases non-zero values so their gradients are exercised
    params = params.with_tensors({k: v + (rng.normal(size=v.shape) if k in ("b1", "b2") else 0)
                                  for k, v in params.tensors.items()})
    mapping = build_mapping(vw, vb, n, seed) if variant.uses_mapping else None
    ids = rng.integers(0, vw, size=int(rng.integers(1, 5)))
    upstream = rng.normal(size=(ids.size, dims.d_out))
    return params, mapping, ids, upstream


class TestShapesAndInit:
    def test_co_w1_shape(self):
        dims = EmbeddingDims(10, d_out=512, byte_vocab_size=256, n=8, h=1024)
        assert dims.shapes(Variant.SEB_CO)["W1"] == (2048, 1024)

    @pytest.mark.parametrize("variant, in_dim", [(Variant.SEB_AR, 6), (Variant.SEB_CR, 18), (Variant.SEB_CO, 48)])
    def test_ffn_in_dim(self, variant, in_dim):
        assert EmbeddingDims(10, 4, byte_vocab_size=16, n=3, d=6, h=5).ffn_in_dim(variant) == in_dim

    def test_fields_per_variant(self):
        dims = EmbeddingDims(10, 4, 16, 3, d=6, h=5, use_bias=True)
        assert list(dims.shapes(Variant.SUBWORD)) == ["W"]
        assert list(dims.shapes(Variant.SEB_AR)) == ["B", "W1", "b1", "W2", "b2"]
        assert list(dims.shapes(Variant.SEB_CO)) == ["W1", "b1", "W2", "b2"]

    @pytest.mark.parametrize("variant", ALL)
    def test_scale_zero(self, variant):
        p = init_params(variant, EmbeddingDims(10, 4, 16, 2, d=3, h=5), scale=0.0)
        assert all(not v.any() for v in p.tensors.values())

    @pytest.mark.parametrize("variant", ALL)
    def test_seeded(self, variant):
        dims = EmbeddingDims(10, 4, 16, 2, d=3, h=5, use_bias=True)
        a, b = init_params(variant, dims, seed=3), init_params(variant, dims, seed=3)
        for k in a.tensors:
            np.testing.assert_array_equal(a[k], b[k])
        assert np.all(np.abs(a[next(iter(a.tensors))]) <= 0.1)
        if variant is not Variant.SUBWORD:
            assert not a["b1"].any() and not a["b2"].any()

    def test_inconsistent_dims(self):
        with pytest.raises(DimensionError):
            init_params(Variant.SEB_CO, EmbeddingDims(10, 4, byte_vocab_size=300, n=2))
        with pytest.raises(DimensionError):
            init_params(Variant.SEB_AR, EmbeddingDims(10, 4, 16, 2, d=0))

    def test_params_reject_bad_tensors(self):
        p = init_params(Variant.SUBWORD, EmbeddingDims(5, 3))
        with pytest.raises(DimensionError):
            EmbeddingParams(Variant.SUBWORD, p.dims, {"W": np.zeros((5, 4))})
        with pytest.raises(ValueError):
            EmbeddingParams(Variant.SUBWORD, p.dims, {"W": np.full((5, 3), np.nan)})


class TestForward:
    @pytest.mark.parametrize("variant", ALL)
    def test_zero_params_zero_output(self, variant):
        dims = EmbeddingDims(20, 4, 8, 3, d=3, h=5, use_bias=True)
        m = build_mapping(20, 8, 3)
        e, _ = embed_forward([1, 5, 19], m, init_params(variant, dims, scale=0.0))
        assert e.shape == (3, 4) and not e.any()

    @pytest.mark.parametrize("seed", range(20))
    def test_co_gather_equals_one_hot(self, seed):
        params, mapping, ids, _ = tiny(Variant.SEB_CO, seed)
        e, _ = embed_forward(ids, mapping, params)
        x = one_hot_concat(mapping.table[ids], mapping.byte_vocab_size)
        assert np.all(x.sum(axis=1) == mapping.bytes_per_subword)
        z = x @ params["W1"]
        if params.dims.use_bias:
            z = z + params["b1"]
        ref = np.maximum(z, 0) @ params["W2"]
        if params.dims.use_bias:
            ref = ref + params["b2"]
        np.testing.assert_allclose(e, ref, rtol=0, atol=1e-12)

    def test_cr_equals_ar_when_n_is_one(self):
        dims = EmbeddingDims(6, 3, byte_vocab_size=8, n=1, d=4, h=5)
        m = build_mapping(6, 8, 1, seed=2)
        ar = init_params(Variant.SEB_AR, dims, seed=1)
        cr = EmbeddingParams(Variant.SEB_CR, dims, dict(ar.tensors))
        np.testing.assert_allclose(embed_forward([0, 3, 5], m, ar)[0], embed_forward([0, 3, 5], m, cr)[0], atol=0)

    def test_cr_is_row_major_concatenation(self):
        dims = EmbeddingDims(6, 3, byte_vocab_size=8, n=2, d=4, h=5)
        m = build_mapping(6, 8, 2, seed=2)
        p = init_params(Variant.SEB_CR, dims, seed=1)
        _, cache = embed_forward([4], m, p)
        b0, b1 = m.table[4]
        np.testing.assert_array_equal(cache.x[0], np.concatenate([p["B"][b0], p["B"][b1]]))

    @pytest.mark.parametrize("variant", ALL)
    def test_permutation_equivariance(self, variant):
        params, mapping, ids, _ = tiny(variant, 11)
        perm = np.random.default_rng(0).permutation(ids.size)
        np.testing.assert_allclose(embed_forward(ids[perm], mapping, params)[0],
                                   embed_forward(ids, mapping, params)[0][perm], atol=1e-14)

    def test_bad_ids_and_mapping(self):
        dims = EmbeddingDims(6, 3, 8, 2, h=4)
        p = init_params(Variant.SEB_CO, dims)
        with pytest.raises(IndexError):
            embed_forward([6], build_mapping(6, 8, 2), p)
        with pytest.raises(DimensionError):
            embed_forward([1], build_mapping(6, 8, 3), p)
        with pytest.raises(DimensionError):
            embed_forward([1], None, p)


class TestBackward:
    @pytest.mark.parametrize("variant", ALL)
    @pytest.mark.parametrize("seed", range(20))
    def test_finite_differences(self, variant, seed):
        params, mapping, ids, upstream = tiny(variant, seed)
        _, cache = embed_forward(ids, mapping, params)
        analytic = embed_backward(cache, upstream)

        def loss(tensors):
            return float(np.sum(embed_forward(ids, mapping, params.with_tensors(tensors))[0] * upstream))

        numeric = numeric_grads(loss, {k: v.copy() for k, v in params.tensors.items()})
        for name in params.tensors:
            assert relative_error(analytic[name], numeric[name]) <= 1e-5, name

    @pytest.mark.parametrize("variant", ALL)
    def test_zero_upstream(self, variant):
        params, mapping, ids, upstream = tiny(variant, 3)
        _, cache = embed_forward(ids, mapping, params)
        assert all(not g.any() for g in embed_backward(cache, np.zeros_like(upstream)).values())

    def test_subword_rows(self):
        dims = EmbeddingDims(10, 4)
        p = init_params(Variant.SUBWORD, dims, seed=1)
        _, cache = embed_forward([3, 7, 3], None, p)
        g = embed_backward(cache, np.random.default_rng(0).normal(size=(3, 4)))["W"]
        touched = np.flatnonzero(np.any(g != 0, axis=1))
        np.testing.assert_array_equal(touched, [3, 7])

    @pytest.mark.parametrize("variant", [Variant.SEB_AR, Variant.SEB_CR, Variant.SEB_CO])
    @pytest.mark.parametrize("seed", range(10))
    def test_structural_sparsity(self, variant, seed):
        params, mapping, ids, upstream = tiny(variant, seed)
        _, cache = embed_forward(ids, mapping, params)
        g = embed_backward(cache, upstream)
        rows = mapping.table[ids]
        if variant.has_byte_matrix:
            unused = np.setdiff1d(np.arange(mapping.byte_vocab_size), rows)
            assert not g["B"][unused].any()
        else:
            unused = np.setdiff1d(np.arange(params.dims.ffn_in_dim(variant)), co_rows(rows, mapping.byte_vocab_size))
            assert not g["W1"][unused].any()

    def test_upstream_shape_checked(self):
        params, mapping, ids, upstream = tiny(Variant.SEB_CO, 0)
        _, cache = embed_forward(ids, mapping, params)
        with pytest.raises(ValueError):
            embed_backward(cache, np.zeros((ids.size, upstream.shape[1] + 1)))


class TestParamCount:
    @pytest.mark.parametrize("vb, n, expected", [(64, 4, 786_432), (256, 16, 4_718_592)])
    def test_published_cells(self, vb, n, expected):
        dims = EmbeddingDims(50_000, 512, vb, n, h=1024)
        assert param_count(Variant.SEB_CO, dims, include_biases=False) == expected

    def test_subword_empty_vocab(self):
        assert param_count(Variant.SUBWORD, EmbeddingDims(0, 512)) == 0

    def test_formulas(self):
        dims = EmbeddingDims(100, 7, 16, 3, d=5, h=11)
        assert param_count(Variant.SUBWORD, dims) == 700
        assert param_count(Variant.SEB_AR, dims) == 16 * 5 + 5 * 11 + 11 * 7
        assert param_count(Variant.SEB_CR, dims) == 16 * 5 + 3 * 5 * 11 + 11 * 7
        assert param_count(Variant.SEB_CO, dims, include_biases=True) == 3 * 16 * 11 + 11 * 7 + 11 + 7

    @given(st.sampled_from(ALL), st.integers(0, 30), st.integers(1, 6), st.integers(2, 10),
           st.integers(1, 3), st.integers(1, 5), st.integers(1, 6), st.booleans())
    @settings(max_examples=60, deadline=None)
    def test_matches_constructed(self, variant, vw, d_out, vb, n, d, h, bias):
        dims = EmbeddingDims(vw, d_out, vb, n, d=d, h=h, use_bias=bias)
        assert param_count(variant, dims) == init_params(variant, dims).num_scalars


class TestSimilarity:
    def test_self_similarity(self):
        dims = EmbeddingDims(10, 4, 8, 2, h=6)
        p = init_params(Variant.SEB_CO, dims, seed=2)
        m = build_mapping(10, 8, 2)
        assert embedding_similarity(p, m, 5, 5) == pytest.approx(1.0)

    def test_antipodal(self):
        dims = EmbeddingDims(3, 2)
        p = EmbeddingParams(Variant.SUBWORD, dims, {"W": np.array([[1.0, 2.0], [-1.0, -2.0], [0.0, 0.0]])})
        assert embedding_similarity(p, None, 0, 1) == pytest.approx(-1.0)
        with pytest.raises(ValueError, match="degenerate embedding"):
            embedding_similarity(p, None, 0, 2)

    def test_cosine_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            assert -1.0 <= cosine(rng.normal(size=5), rng.normal(size=5)) <= 1.0


class TestScatter:
    def test_matches_add_at(self):
        rng = np.random.default_rng(1)
        idx = rng.integers(0, 7, size=40)
        vals = rng.normal(size=(40, 3))
        ref = np.zeros((7, 3))
        np.add.at(ref, idx, vals)
        np.testing.assert_allclose(scatter_add_rows(7, idx, vals), ref, atol=1e-13)
