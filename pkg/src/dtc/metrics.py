"""Gibbs entropy of measurement vectors, correlation and the quasi-static monitor."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError, DataError, ShapeError, UndefinedCorrelationError


@dataclass(frozen=True)
class EntropyConfig:
    bins: int = 64
    range_mode: str = "minmax"  # or "fixed"
    fixed_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.bins < 2:
            raise ConfigError(f"entropy bins must be >= 2, got {self.bins}")
        if self.range_mode not in ("minmax", "fixed"):
            raise ConfigError(f"range_mode must be 'minmax' or 'fixed', got {self.range_mode!r}")


@dataclass
class CycleRecord:
    cycle: int
    sparsity: float
    test_accuracy: float
    gibbs_prev: float
    gibbs_next: float
    gibbs_mean: float
    ray_total_prev: float
    ray_total_next: float
    opt_calls_train: int
    opt_calls_compress: int

    @classmethod
    def columns(cls) -> list:
        return [f.name for f in fields(cls)]

    def as_row(self) -> list:
        return list(asdict(self).values())


def gibbs_entropy(y, cfg: EntropyConfig = EntropyConfig()) -> float:
    """Entropy in bits of the equal-width histogram of ``y``.

    Bins span ``[min(y), max(y)]`` (or ``cfg.fixed_range``); a constant
    vector occupies a single bin and has zero entropy.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size == 0:
        raise DataError("gibbs_entropy: empty vector")
    if cfg.range_mode == "fixed":
        lo, hi = cfg.fixed_range
    else:
        lo, hi = float(y.min()), float(y.max())
        if lo == hi:
            return 0.0
    y = y[(y >= lo) & (y <= hi)]
    # normalising before scaling by bins survives subnormal spans
    if np.isfinite(hi - lo):
        pos = (y - lo) / (hi - lo)
    else:
        pos = (y / 2 - lo / 2) / (hi / 2 - lo / 2)
    idx = np.minimum((pos * cfg.bins).astype(np.int64), cfg.bins - 1)
    counts = np.bincount(idx, minlength=cfg.bins)
    p = counts[counts > 0] / counts.sum() if counts.sum() else np.zeros(0)
    return float(max(0.0, -(p * np.log2(p)).sum()))


def mean_layer_entropy(entropies) -> float:
    entropies = list(entropies)
    if not entropies:
        raise DataError("mean_layer_entropy: no entropies given")
    return float(np.mean(entropies))


def pearson(a, b) -> float:
    """Sample Pearson correlation; raises for constant or mismatched series."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"pearson: series shapes {a.shape} and {b.shape} differ")
    if a.size < 2:
        raise UndefinedCorrelationError("pearson: need at least two points")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = math.sqrt(float(da @ da)), math.sqrt(float(db @ db))
    if sa == 0.0 or sb == 0.0:
        raise UndefinedCorrelationError("pearson: constant series")
    return float(np.clip((da @ db) / (sa * sb), -1.0, 1.0))


@dataclass
class QuasiStaticReport:
    accuracy_steps: list
    entropy_steps: list
    accuracy_ok: list
    entropy_ok: list
    mean_accuracy_step: float
    mean_entropy_step: float

    @property
    def all_ok(self) -> bool:
        return all(self.accuracy_ok) and all(self.entropy_ok)


def quasi_static_check(records, eps: float, delta: float) -> QuasiStaticReport:
    """Flag consecutive cycles whose accuracy or mean-entropy change is too large.

    Step sizes are absolute differences; the means are the averages of the
    signed differences, which tend to zero for quasi-static runs.
    """
    records = list(records)
    if len(records) < 2:
        raise DataError("quasi_static_check: need at least two records")
    f = np.array([r.test_accuracy for r in records])
    g = np.array([r.gibbs_mean for r in records])
    df, dg = np.diff(f), np.diff(g)
    return QuasiStaticReport(
        accuracy_steps=np.abs(df).tolist(),
        entropy_steps=np.abs(dg).tolist(),
        accuracy_ok=(np.abs(df) < eps).tolist(),
        entropy_ok=(np.abs(dg) < delta).tolist(),
        mean_accuracy_step=float(df.mean()),
        mean_entropy_step=float(dg.mean()),
    )
