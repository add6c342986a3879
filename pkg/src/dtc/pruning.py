"""Neuron selection policies and the cumulative sparsity schedule.

Every policy maps the weights around one hidden layer (incoming ``p x n``
matrix, outgoing ``n x q`` matrix) and a per-cycle clip fraction to the
sorted set of neurons to keep.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .ics import (
    MeasurementEnsemble,
    SolverSettings,
    build_measurement,
    solve_weight_ray,
)
from .linalg import SeededRng, as_matrix

log = logging.getLogger(__name__)

STRATEGIES = ("dtc", "magnitude", "random")

# cumulative sparsity grid of the reference experiment; each is 1 - k/512
TABLE_SPARSITY = (
    0.1016, 0.1914, 0.3477, 0.4141, 0.5254, 0.6172, 0.7520, 0.8594,
    0.9121, 0.9219, 0.9297, 0.9512, 0.9707, 0.9785, 0.9824,
)


@dataclass
class PruneDecision:
    layer_idx: int
    keep: np.ndarray
    scores: np.ndarray
    strategy: str
    measurement_prev: np.ndarray | None = None
    measurement_next: np.ndarray | None = None
    ray_prev: np.ndarray | None = None
    ray_next: np.ndarray | None = None
    solver_calls: int = 0
    solver_iters: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "layer": self.layer_idx,
            "strategy": self.strategy,
            "kept": int(self.keep.size),
            "score_min": float(self.scores.min()),
            "score_max": float(self.scores.max()),
            "score_mean": float(self.scores.mean()),
            "measurements": None if self.measurement_prev is None else int(self.measurement_prev.size),
        }


def _half_up(x: float) -> int:
    return int(math.floor(round(x, 9) + 0.5))


def keep_count(n_cur: int, s_step: float) -> int:
    """``max(1, round(n_cur * (1 - s_step)))`` with halves rounded up."""
    if not 0.0 <= s_step < 1.0:
        raise ConfigError(f"clip fraction must lie in [0, 1), got {s_step}")
    k = _half_up(n_cur * (1.0 - s_step))
    if k < 1:
        log.warning("clip fraction %.4f would empty a %d-neuron layer; keeping 1", s_step, n_cur)
        k = 1
    return min(k, n_cur)


def clip_by_quantile(scores, s_step: float) -> np.ndarray:
    """Indices of the top ``keep_count`` scores, ties to the lower index, sorted."""
    scores = np.asarray(scores, dtype=np.float64)
    k = keep_count(scores.size, s_step)
    order = np.lexsort((np.arange(scores.size), -scores))
    return np.sort(order[:k])


def weight_rays_from_layer(w_prev, w_next):
    """Per-neuron absolute sums of incoming and outgoing weights."""
    w_prev = as_matrix(w_prev, "w_prev")
    w_next = as_matrix(w_next, "w_next")
    if w_prev.shape[1] != w_next.shape[0]:
        raise ShapeError(f"weight rays: incoming {w_prev.shape} and outgoing {w_next.shape} do not share a layer")
    return np.abs(w_prev).sum(axis=0), np.abs(w_next).sum(axis=1)


def layer_measurements(w_p, w_q, keep_fraction: float, rng: SeededRng, measure=build_measurement):
    """One measurement ensemble per side, on independent streams."""
    return measure(w_p, keep_fraction, rng.child("prev")), measure(w_q, keep_fraction, rng.child("next"))


def dtc_select(
    w_prev,
    w_next,
    s_step: float,
    settings: SolverSettings,
    rng: SeededRng,
    keep_fraction: float | None = None,
    measure=build_measurement,
    layer_idx: int = 0,
) -> PruneDecision:
    """Dual tomographic selection.

    Both weight rays are measured and reconstructed by L1 recovery; neurons
    are ranked by the sum of the two reconstructions and the lowest
    ``s_step`` fraction is clipped.  ``keep_fraction`` sets the measurement
    count and defaults to ``1 - s_step``.  ``measure`` builds an ensemble
    from ``(w, keep_fraction, rng)`` and exists so tests can inject one.
    """
    w_p, w_q = weight_rays_from_layer(w_prev, w_next)
    if keep_fraction is None:
        keep_fraction = 1.0 - s_step
    ens_p, ens_q = layer_measurements(w_p, w_q, keep_fraction, rng, measure)
    sol_p = solve_weight_ray(ens_p, settings)
    sol_q = solve_weight_ray(ens_q, settings)
    for side, sol in (("prev", sol_p), ("next", sol_q)):
        if not sol.converged:
            log.debug("layer %d %s ray: solver stopped after %d iterations", layer_idx, side, sol.iters)
    scores = sol_p.w_r + sol_q.w_r
    return PruneDecision(
        layer_idx=layer_idx,
        keep=clip_by_quantile(scores, s_step),
        scores=scores,
        strategy="dtc",
        measurement_prev=ens_p.y,
        measurement_next=ens_q.y,
        ray_prev=sol_p.w_r,
        ray_next=sol_q.w_r,
        solver_calls=2,
        solver_iters=[sol_p.iters, sol_q.iters],
    )


def magnitude_select(w_prev, w_next, s_step: float, layer_idx: int = 0) -> PruneDecision:
    """Keep the neurons with the largest summed absolute incoming weights."""
    w_p, w_q = weight_rays_from_layer(w_prev, w_next)
    return PruneDecision(
        layer_idx=layer_idx,
        keep=clip_by_quantile(w_p, s_step),
        scores=w_p,
        strategy="magnitude",
        ray_prev=w_p,
        ray_next=w_q,
    )


def random_select(n_cur: int, s_step: float, rng: SeededRng, layer_idx: int = 0) -> PruneDecision:
    """Uniform sample without replacement of ``keep_count(n_cur, s_step)`` neurons."""
    # top-k of i.i.d. uniform priorities is a uniform k-subset
    priorities = rng.generator.random(n_cur)
    return PruneDecision(
        layer_idx=layer_idx,
        keep=clip_by_quantile(priorities, s_step),
        scores=priorities,
        strategy="random",
    )


# -- schedule -------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    """Named cumulative-sparsity schedule.

    ``table``: the 15-step reference grid.  ``geometric``: ``1 - rate**i``.
    ``linear``: ``final * i / cycles``.  ``custom``: explicit ``values``.
    """

    name: str = "table"
    rate: float = 0.9
    final: float = 0.9
    values: tuple = ()

    def targets(self, cycles: int) -> list:
        if self.name == "table":
            if cycles > len(TABLE_SPARSITY):
                raise ConfigError(f"table schedule has {len(TABLE_SPARSITY)} steps, {cycles} cycles requested")
            out = list(TABLE_SPARSITY[:cycles])
        elif self.name == "geometric":
            if not 0.0 < self.rate < 1.0:
                raise ConfigError(f"geometric rate must lie in (0, 1), got {self.rate}")
            out = [1.0 - self.rate**i for i in range(1, cycles + 1)]
        elif self.name == "linear":
            if not 0.0 <= self.final < 1.0:
                raise ConfigError(f"linear final sparsity must lie in [0, 1), got {self.final}")
            out = [self.final * i / cycles for i in range(1, cycles + 1)]
        elif self.name == "custom":
            if len(self.values) < cycles:
                raise ConfigError(f"custom schedule has {len(self.values)} values, {cycles} cycles requested")
            out = [float(v) for v in self.values[:cycles]]
        else:
            raise ConfigError(f"unknown schedule {self.name!r}")
        for a, b in zip(out, out[1:]):
            if b < a:
                raise ConfigError(f"schedule is not monotone: {a} then {b}")
        if out and not (0.0 <= out[0] and out[-1] < 1.0):
            raise ConfigError("schedule targets must lie in [0, 1)")
        return out


def sparsity_schedule(cycle: int, schedule: Schedule, cycles: int) -> float:
    """Cumulative sparsity target after ``cycle`` (1-based)."""
    if not 1 <= cycle <= cycles:
        raise ConfigError(f"cycle must lie in [1, {cycles}], got {cycle}")
    return schedule.targets(cycles)[cycle - 1]


def target_width(n_initial: int, s_target: float) -> int:
    return max(1, _half_up(n_initial * (1.0 - s_target)))


def clip_fraction(n_initial: int, n_cur: int, s_target: float) -> float:
    """Per-cycle clip fraction taking a layer from ``n_cur`` to its target width."""
    k = target_width(n_initial, s_target)
    if k >= n_cur:
        return 0.0
    return 1.0 - k / n_cur
