import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dtc.errors import ConfigError, DataError, UndefinedCorrelationError
from dtc.metrics import (
    CycleRecord,
    EntropyConfig,
    gibbs_entropy,
    mean_layer_entropy,
    pearson,
    quasi_static_check,
)


def naive_entropy(y, bins):
    lo, hi = min(y), max(y)
    width = (hi - lo) / bins
    counts = [0] * bins
    for v in y:
        k = int((v - lo) / width)
        counts[min(k, bins - 1)] += 1
    h = 0.0
    for c in counts:
        if c:
            p = c / len(y)
            h -= p * math.log2(p)
    return h


def record(i, acc, g):
    return CycleRecord(i, 0.1 * i, acc, g, g, g, 0.0, 0.0, 0, 0)


finite = st.floats(-1e6, 1e6, allow_nan=False)


class TestGibbsEntropy:
    def test_uniform_four_bins(self):
        assert gibbs_entropy([0.0, 1.0, 2.0, 3.0], EntropyConfig(bins=4)) == 2.0
        assert gibbs_entropy([0.0, 1.0, 2.0, 3.0]) == 2.0

    def test_constant(self):
        assert gibbs_entropy(np.full(10, 3.3)) == 0.0

    def test_against_naive_histogram(self):
        y = np.random.default_rng(0).normal(size=512)
        assert abs(gibbs_entropy(y, EntropyConfig(bins=64)) - naive_entropy(y, 64)) < 1e-12

    def test_fixed_range(self):
        cfg = EntropyConfig(bins=2, range_mode="fixed", fixed_range=(0.0, 1.0))
        assert gibbs_entropy([0.1, 0.2, 0.7, 0.9], cfg) == 1.0

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            EntropyConfig(bins=1)

    def test_empty(self):
        with pytest.raises(DataError):
            gibbs_entropy([])

    @pytest.mark.parametrize("y", [[5e-324, 0.0], [-1e308, 1e308]])
    def test_extreme_ranges(self, y):
        assert gibbs_entropy(y, EntropyConfig(bins=2)) == 1.0

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.integers(1, 200), elements=finite), st.integers(2, 128))
    def test_bounds(self, y, bins):
        h = gibbs_entropy(y, EntropyConfig(bins=bins))
        assert 0.0 <= h <= math.log2(bins) + 1e-12

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.integers(1, 100), elements=finite), st.integers(0, 2**31))
    def test_permutation_invariant(self, y, seed):
        perm = np.random.default_rng(seed).permutation(y)
        assert gibbs_entropy(perm) == gibbs_entropy(y)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.5, 4.0), st.sampled_from([0.0, 1.0, -3.0]))
    def test_positive_affine_invariant(self, seed, a, b):
        # exact power-of-two-ish scales avoid bin-edge roundoff flips
        y = np.random.default_rng(seed).integers(-50, 50, size=80).astype(float)
        a = 2.0 ** round(math.log2(a))
        assert gibbs_entropy(a * y + b) == gibbs_entropy(y)


class TestMeanEntropy:
    def test_single(self):
        assert mean_layer_entropy([2.0]) == 2.0

    def test_pair(self):
        assert mean_layer_entropy([1.0, 3.0]) == 2.0

    def test_against_naive(self):
        vals = np.random.default_rng(1).uniform(0, 6, size=13).tolist()
        assert abs(mean_layer_entropy(vals) - sum(vals) / len(vals)) < 1e-12

    def test_empty(self):
        with pytest.raises(DataError):
            mean_layer_entropy([])


class TestPearson:
    def test_perfect(self):
        assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)

    def test_anti(self):
        assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)

    def test_against_covariance_formula(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=30), rng.normal(size=30)
        ma, mb = sum(a) / 30, sum(b) / 30
        cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
        va = sum((x - ma) ** 2 for x in a)
        vb = sum((y - mb) ** 2 for y in b)
        assert abs(pearson(a, b) - cov / math.sqrt(va * vb)) < 1e-12

    def test_constant(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson([1, 1, 1], [1, 2, 3])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.1, 10), st.floats(-5, 5))
    def test_symmetric_and_affine_invariant(self, seed, scale, shift):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=20), rng.normal(size=20)
        r = pearson(a, b)
        assert -1.0 <= r <= 1.0
        assert pearson(b, a) == pytest.approx(r, abs=1e-12)
        assert pearson(a * scale + shift, b) == pytest.approx(r, abs=1e-9)


class TestQuasiStatic:
    def test_constant_accuracy(self):
        recs = [record(i, 0.97, 5.0) for i in range(5)]
        rep = quasi_static_check(recs, eps=0.01, delta=0.1)
        assert all(rep.accuracy_ok) and rep.all_ok

    def test_flags_drop(self):
        recs = [record(0, 0.97, 5.0), record(1, 0.92, 5.0), record(2, 0.92, 5.0)]
        rep = quasi_static_check(recs, eps=0.01, delta=0.1)
        assert rep.accuracy_ok == [False, True]

    def test_means_against_naive(self):
        rng = np.random.default_rng(3)
        acc, ent = rng.uniform(0.8, 1, 9), rng.uniform(3, 6, 9)
        recs = [record(i, a, g) for i, (a, g) in enumerate(zip(acc, ent))]
        rep = quasi_static_check(recs, 0.05, 0.5)
        naive_f = sum(acc[i] - acc[i - 1] for i in range(1, 9)) / 8
        naive_g = sum(ent[i] - ent[i - 1] for i in range(1, 9)) / 8
        assert abs(rep.mean_accuracy_step - naive_f) < 1e-12
        assert abs(rep.mean_entropy_step - naive_g) < 1e-12
        assert rep.entropy_steps == pytest.approx([abs(ent[i] - ent[i - 1]) for i in range(1, 9)])

    def test_needs_two(self):
        with pytest.raises(DataError):
            quasi_static_check([record(0, 0.9, 1.0)], 0.1, 0.1)
