import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seb.rng import Stream


class TestStream:
    def test_same_keys_same_words(self):
        np.testing.assert_array_equal(Stream(7, 1, 2).raw(16), Stream(7, 1, 2).raw(16))

    def test_keys_separate_streams(self):
        assert not np.array_equal(Stream(7, 1).raw(8), Stream(7, 2).raw(8))
        assert not np.array_equal(Stream(7).raw(8), Stream(8).raw(8))

    @given(st.integers(2, 300), st.lists(st.integers(1, 40), min_size=1, max_size=6))
    @settings(max_examples=40, deadline=None)
    def test_integers_independent_of_chunking(self, k, chunks):
        whole = Stream(3).integers(k, sum(chunks))
        s = Stream(3)
        pieces = np.concatenate([s.integers(k, c) for c in chunks])
        np.testing.assert_array_equal(whole, pieces)
        assert whole.min() >= 0 and whole.max() < k

    def test_integers_roughly_uniform(self):
        draws = Stream(11).integers(6, 60_000)
        counts = np.bincount(draws, minlength=6)
        # 5 sigma around 10_000 per bin
        assert np.all(np.abs(counts - 10_000) < 5 * np.sqrt(10_000 * 5 / 6))

    @given(st.integers(1, 50), st.data())
    @settings(max_examples=40, deadline=None)
    def test_sample_is_distinct_subset(self, population, data):
        k = data.draw(st.integers(0, population))
        picked = Stream(5).sample(population, k)
        assert len(picked) == k == len(set(picked))
        assert all(0 <= i < population for i in picked)

    def test_permutation(self):
        assert sorted(Stream(1).permutation(100)) == list(range(100))

    def test_sample_too_many(self):
        with pytest.raises(ValueError):
            Stream(0).sample(3, 4)

    def test_uniform_range(self):
        u = Stream(2).uniform(-0.5, 0.25, 10_000)
        assert u.min() >= -0.5 and u.max() < 0.25
        assert abs(u.mean() - (-0.125)) < 0.01

    def test_categorical_follows_cdf(self):
        cdf = np.cumsum([0.5, 0.25, 0.25])
        draws = Stream(4).categorical(cdf, 40_000)
        freq = np.bincount(draws, minlength=3) / 40_000
        np.testing.assert_allclose(freq, [0.5, 0.25, 0.25], atol=0.015)
