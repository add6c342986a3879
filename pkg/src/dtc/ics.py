"""Inverse compressed sensing on known weight vectors.

A known vector ``w`` of length ``m`` is "measured" with a fresh Gaussian
matrix ``phi`` (``n_meas x m``), giving ``y = phi @ w``.  The sparse weight
ray is then recovered in the DCT basis ``psi`` by solving

    min_r  ||theta @ r - y||^2 + lam * ||r||_1,    theta = phi @ psi

with FISTA plus function-value restart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceError, NumericalError, ShapeError
from .linalg import SeededRng, as_vector, dct_matrix, gaussian_matrix, spectral_norm_sq


@dataclass(frozen=True)
class MeasurementEnsemble:
    psi: np.ndarray
    phi: np.ndarray
    theta: np.ndarray
    y: np.ndarray

    @property
    def m(self) -> int:
        return self.theta.shape[1]

    @property
    def n_meas(self) -> int:
        return self.theta.shape[0]


@dataclass(frozen=True)
class SolverSettings:
    """``lam`` is absolute when ``lambda_mode == "absolute"``; otherwise it
    is scaled by ``||theta.T @ y||_inf`` of each problem."""

    lam: float = 0.01
    lambda_mode: str = "relative"
    max_iters: int = 500
    tol: float = 1e-6

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.lambda_mode not in ("relative", "absolute"):
            raise ConfigError(f"lambda_mode must be 'relative' or 'absolute', got {self.lambda_mode!r}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tol > 0:
            raise ConfigError(f"tol must be > 0, got {self.tol}")

    def effective_lambda(self, ens: MeasurementEnsemble) -> float:
        if self.lambda_mode == "absolute":
            return float(self.lam)
        return float(self.lam * np.max(np.abs(ens.theta.T @ ens.y)))


@dataclass(frozen=True)
class SolveResult:
    w_r: np.ndarray
    iters: int
    converged: bool
    objective: float
    lam: float


def measurement_count(m: int, keep_fraction: float) -> int:
    if not 0.0 < keep_fraction <= 1.0:
        raise ConfigError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    # guard against ceil(8.000000000001) style float noise
    return max(1, math.ceil(round(m * keep_fraction, 9)))


def ensemble_from(phi, psi, w) -> MeasurementEnsemble:
    phi = np.asarray(phi, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    w = as_vector(w, "w")
    if phi.shape[1] != w.size or psi.shape != (w.size, w.size):
        raise ShapeError(f"ensemble: phi {phi.shape}, psi {psi.shape} incompatible with w of length {w.size}")
    return MeasurementEnsemble(psi=psi, phi=phi, theta=phi @ psi, y=phi @ w)


def build_measurement(w, keep_fraction: float, rng: SeededRng) -> MeasurementEnsemble:
    """Hypothetical measurement of the known vector ``w``.

    ``n_meas = max(1, ceil(m * keep_fraction))`` rows of fresh Gaussian
    randomisation drawn from ``rng``; ``psi`` is the orthonormal DCT-II.
    """
    w = as_vector(w, "w")
    if w.size < 1:
        raise ShapeError("build_measurement: empty weight vector")
    n_meas = measurement_count(w.size, keep_fraction)
    return ensemble_from(gaussian_matrix(n_meas, w.size, rng), dct_matrix(w.size), w)


def soft_threshold(v, t: float) -> np.ndarray:
    """Proximal operator of ``t * ||.||_1``: ``sign(v) * max(|v| - t, 0)``."""
    if t < 0:
        raise ConfigError(f"soft_threshold: threshold must be >= 0, got {t}")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def objective(ens: MeasurementEnsemble, w_r, lam: float) -> float:
    w_r = np.asarray(w_r, dtype=np.float64)
    if w_r.shape != (ens.m,):
        raise ShapeError(f"objective: w_r shape {w_r.shape} != ({ens.m},)")
    r = ens.theta @ w_r - ens.y
    return float(r @ r + lam * np.abs(w_r).sum())


def lipschitz_constant(theta) -> float:
    """Lipschitz constant of the gradient of ``||theta r - y||^2``."""
    try:
        s = spectral_norm_sq(theta)
    except ConvergenceError:
        s = float(np.linalg.norm(theta, 2) ** 2)
    return 2.0 * s


def solve_weight_ray(ens: MeasurementEnsemble, settings: SolverSettings = SolverSettings()) -> SolveResult:
    """Reconstruct the sparse weight ray by FISTA with adaptive restart.

    Step size ``1/L`` with ``L = 2 * ||theta||_2^2``.  Iteration stops once
    the relative objective change drops below ``settings.tol``.  The
    returned iterate never has a larger objective than ``r = 0``.
    """
    theta, y = ens.theta, ens.y
    lam = settings.effective_lambda(ens)
    L = lipschitz_constant(theta)
    x = np.zeros(ens.m)
    f_x = objective(ens, x, lam)
    if L == 0.0 or f_x == 0.0:
        return SolveResult(x, 0, True, f_x, lam)

    z, t = x.copy(), 1.0
    converged = False
    it = 0
    for it in range(1, settings.max_iters + 1):
        grad = 2.0 * (theta.T @ (theta @ z - y))
        x_new = soft_threshold(z - grad / L, lam / L)
        f_new = objective(ens, x_new, lam)
        if not math.isfinite(f_new):
            raise NumericalError(f"solve_weight_ray: non-finite objective at iteration {it}")
        change = abs(f_x - f_new) / max(abs(f_x), np.finfo(float).tiny)
        if f_new > f_x:
            if change < settings.tol:
                # roundoff-level increase at the optimum
                converged = True
                break
            # momentum overshoot: restart from the current iterate
            z, t = x.copy(), 1.0
            continue
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        z = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, f_x, t = x_new, f_new, t_new
        if change < settings.tol:
            converged = True
            break
    return SolveResult(x, it, converged, f_x, lam)
