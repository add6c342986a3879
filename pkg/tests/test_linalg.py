import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtc.errors import ConvergenceError, InvalidSizeError, ShapeError
from dtc.linalg import SeededRng, dct_matrix, gaussian_matrix, matmul, spectral_norm_sq


def naive_matmul(a, b):
    out = np.zeros((len(a), len(b[0])))
    for i in range(len(a)):
        for j in range(len(b[0])):
            s = 0.0
            for k in range(len(b)):
                s += a[i][k] * b[k][j]
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity(self):
        a = np.arange(12.0).reshape(3, 4)
        np.testing.assert_array_equal(matmul(np.eye(3), a), a)

    def test_hand_arithmetic(self):
        np.testing.assert_array_equal(matmul([[1, 2], [3, 4]], [[0], [1]]), [[2], [4]])

    def test_against_triple_loop(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(7, 5)), rng.normal(size=(5, 3))
        assert np.max(np.abs(matmul(a, b) - naive_matmul(a, b))) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_associativity(self, p, q, r, s, seed):
        rng = np.random.default_rng(seed)
        a, b, c = rng.normal(size=(p, q)), rng.normal(size=(q, r)), rng.normal(size=(r, s))
        np.testing.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), atol=1e-9)


class TestDct:
    def test_size_one(self):
        np.testing.assert_allclose(dct_matrix(1), [[1.0]])

    def test_size_two(self):
        h = 1 / np.sqrt(2)
        np.testing.assert_allclose(dct_matrix(2), [[h, h], [h, -h]], atol=1e-15)

    @pytest.mark.parametrize("m", [1, 2, 3, 16, 64, 256])
    def test_orthonormal(self, m):
        psi = dct_matrix(m)
        assert np.max(np.abs(psi @ psi.T - np.eye(m))) < 1e-10

    def test_definition_entries(self):
        m = 5
        psi = dct_matrix(m)
        for k in range(m):
            ck = 1 / np.sqrt(2) if k == 0 else 1.0
            for j in range(m):
                expected = ck * np.sqrt(2 / m) * np.cos(np.pi * (2 * j + 1) * k / (2 * m))
                assert psi[k, j] == pytest.approx(expected, abs=1e-15)

    def test_zero_size(self):
        with pytest.raises(InvalidSizeError):
            dct_matrix(0)


class TestGaussian:
    def test_same_seed_bitwise(self):
        a = gaussian_matrix(4, 6, SeededRng(7, 3))
        b = gaussian_matrix(4, 6, SeededRng(7, 3))
        assert a.tobytes() == b.tobytes()

    def test_moments(self):
        g = gaussian_matrix(1000, 1000, SeededRng(0))
        assert abs(g.mean()) < 0.01
        assert abs(g.var() - 1.0) < 0.02

    def test_streams_differ(self):
        assert not np.array_equal(gaussian_matrix(3, 3, SeededRng(0, 1)), gaussian_matrix(3, 3, SeededRng(0, 2)))

    def test_child_streams_are_order_independent(self):
        root = SeededRng(5)
        first = root.child("phi", 1, 0).generator.standard_normal(4)
        root.child("phi", 2, 0).generator.standard_normal(100)
        again = SeededRng(5).child("phi", 1, 0).generator.standard_normal(4)
        np.testing.assert_array_equal(first, again)

    def test_zero_dimension(self):
        with pytest.raises(InvalidSizeError):
            gaussian_matrix(0, 3, SeededRng(0))


class TestSpectralNorm:
    def test_diagonal(self):
        assert spectral_norm_sq(np.diag([1.0, 2.0, 3.0])) == pytest.approx(9.0, rel=1e-9)

    def test_identity(self):
        assert spectral_norm_sq(np.eye(5)) == pytest.approx(1.0, rel=1e-12)

    def test_against_eigensolver(self):
        a = np.random.default_rng(3).normal(size=(10, 8))
        expected = np.linalg.eigvalsh(a.T @ a).max()
        assert abs(spectral_norm_sq(a) - expected) / expected < 1e-6

    def test_non_convergence_carries_estimate(self):
        a = np.diag([1.0, 0.999999, 0.5])
        with pytest.raises(ConvergenceError) as info:
            spectral_norm_sq(a, iters=2, tol=1e-15)
        assert 0.5 < info.value.estimate <= 1.0
