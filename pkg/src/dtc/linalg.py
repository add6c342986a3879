"""Dense linear algebra helpers, seeded randomness and the special matrices.

Matrices and vectors are plain ``numpy.ndarray`` objects of dtype float64
(2-D and 1-D respectively).  The helpers here validate shapes and
finiteness at the boundaries where the rest of the package relies on them.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .errors import ConvergenceError, InvalidSizeError, NumericalError, ShapeError

_MASK64 = (1 << 64) - 1


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name}: expected 2-D array, got shape {a.shape}")
    _check_finite(a, name)
    return a


def as_vector(v, name: str = "vector") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name}: expected 1-D array, got shape {v.shape}")
    _check_finite(v, name)
    return v


def _check_finite(a: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"{name}: contains non-finite entries")


def stream_id(*labels) -> int:
    """Map an arbitrary tuple of labels to a 64-bit stream id."""
    digest = hashlib.blake2b(repr(labels).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class SeededRng:
    """Counter-based generator keyed by ``(seed, stream)``.

    Backed by Philox, so the sequence for a given key is identical across
    runs and platforms and independent of the order in which other streams
    are consumed.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        bitgen = np.random.Philox(key=np.array([self.seed, self.stream], dtype=np.uint64))
        self.generator = np.random.Generator(bitgen)

    def child(self, *labels) -> "SeededRng":
        """Fresh generator on a stream derived from this one and ``labels``."""
        return SeededRng(self.seed, stream_id(self.stream, *labels))

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream={self.stream})"


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    _check_finite(out, "matmul result")
    return out


def dct_matrix(m: int) -> np.ndarray:
    """Orthonormal DCT-II matrix of size ``m x m``.

    ``C[k, j] = c_k * sqrt(2/m) * cos(pi * (2j + 1) * k / (2m))`` with
    ``c_0 = 1/sqrt(2)`` and ``c_k = 1`` otherwise, so ``C @ C.T == I``.
    """
    if m < 1:
        raise InvalidSizeError(f"dct_matrix: size must be >= 1, got {m}")
    k = np.arange(m, dtype=np.float64)[:, None]
    j = np.arange(m, dtype=np.float64)[None, :]
    c = np.cos(np.pi * (2.0 * j + 1.0) * k / (2.0 * m)) * math.sqrt(2.0 / m)
    c[0, :] *= 1.0 / math.sqrt(2.0)
    return c


def gaussian_matrix(n: int, m: int, rng: SeededRng) -> np.ndarray:
    """``n x m`` matrix of i.i.d. standard normal entries (no row scaling)."""
    if n < 1 or m < 1:
        raise InvalidSizeError(f"gaussian_matrix: dimensions must be >= 1, got {n}x{m}")
    return rng.generator.standard_normal((n, m))


def spectral_norm_sq(a, iters: int = 1000, tol: float = 1e-10) -> float:
    """Largest eigenvalue of ``a.T @ a`` by power iteration.

    Stops when the Rayleigh-quotient estimate changes by less than ``tol``
    relative to itself.  Raises :class:`ConvergenceError` carrying the last
    estimate when ``iters`` is exhausted.
    """
    a = as_matrix(a, "spectral_norm_sq input")
    if a.size == 0:
        raise InvalidSizeError("spectral_norm_sq: empty matrix")
    gram = a.T @ a
    # deterministic start vector with no zero components
    x = 1.0 + np.arange(gram.shape[0], dtype=np.float64) / gram.shape[0]
    x /= np.linalg.norm(x)
    estimate = float(x @ gram @ x)
    for _ in range(iters):
        z = gram @ x
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return 0.0
        x = z / nz
        new = float(x @ gram @ x)
        if abs(new - estimate) <= tol * max(abs(new), np.finfo(float).tiny):
            return new
        estimate = new
    raise ConvergenceError(
        f"spectral_norm_sq: no convergence in {iters} iterations", estimate=estimate
    )
