"""Train-compress cycles, strategy comparison and run outputs.

One cycle trains ``batches_per_cycle`` mini-batches, then compresses every
hidden layer in turn (incoming weights of layer ``j`` are already reduced
by the clip applied to layer ``j - 1``) and evaluates on the test set.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .data import BatchIterator, Dataset, load_mnist
from .errors import ConfigError, OutputError, UndefinedCorrelationError
from .ics import SolverSettings
from .linalg import SeededRng
from .metrics import CycleRecord, EntropyConfig, gibbs_entropy, mean_layer_entropy, pearson
from .pruning import (
    STRATEGIES,
    Schedule,
    clip_fraction,
    dtc_select,
    layer_measurements,
    magnitude_select,
    random_select,
    weight_rays_from_layer,
)

log = logging.getLogger(__name__)

MEASUREMENT_CONVENTIONS = ("keep", "sparsity")
# fields that locate inputs/outputs but do not change the experiment
_LOCATION_FIELDS = ("data_dir", "out_path")


@dataclass
class RunConfig:
    strategy: str = "dtc"
    seed: int = 0
    cycles: int = 15
    batches_per_cycle: int = 200
    batch_size: int = 512
    hidden_width: int = 512
    hidden_layers: int = 1
    lr: float = 0.001
    use_batchnorm: bool = True
    schedule: str = "table"
    schedule_rate: float = 0.9
    schedule_final: float = 0.9
    schedule_values: tuple = ()
    lambda_mode: str = "relative"
    lam: float = 0.01
    solver_max_iters: int = 500
    solver_tol: float = 1e-6
    measurement: str = "keep"
    bins: int = 64
    data_dir: str | None = None
    out_path: str | None = None

    def __post_init__(self):
        self.schedule_values = tuple(float(v) for v in self.schedule_values)
        self.validate()

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.measurement not in MEASUREMENT_CONVENTIONS:
            raise ConfigError(f"measurement must be one of {MEASUREMENT_CONVENTIONS}, got {self.measurement!r}")
        if self.cycles < 0:
            raise ConfigError(f"cycles must be >= 0, got {self.cycles}")
        for name in ("batches_per_cycle", "batch_size", "hidden_width", "hidden_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        self.solver_settings()
        self.entropy_config()
        if self.cycles:
            self.schedule_obj().targets(self.cycles)

    def solver_settings(self) -> SolverSettings:
        return SolverSettings(self.lam, self.lambda_mode, self.solver_max_iters, self.solver_tol)

    def schedule_obj(self) -> Schedule:
        return Schedule(self.schedule, self.schedule_rate, self.schedule_final, self.schedule_values)

    def entropy_config(self) -> EntropyConfig:
        return EntropyConfig(bins=self.bins)

    def experiment_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in _LOCATION_FIELDS:
            d.pop(key)
        d["schedule_values"] = list(d["schedule_values"])
        return d

    def digest(self) -> str:
        blob = json.dumps(self.experiment_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class RunResult:
    config: RunConfig
    records: list
    pre_clip_accuracy: list
    decisions: list
    param_counts: list
    solver_iters: list
    train_calls: int
    compress_calls: int
    network: nn.Network | None = field(default=None, repr=False)

    @property
    def final_accuracy(self) -> float:
        return self.records[-1].test_accuracy

    @property
    def config_digest(self) -> str:
        return self.config.digest()

    def correlation(self, column: str = "gibbs_mean") -> float | None:
        try:
            return pearson([r.test_accuracy for r in self.records], [getattr(r, column) for r in self.records])
        except UndefinedCorrelationError:
            return None

    @property
    def pearson_acc_entropy(self) -> float | None:
        return self.correlation("gibbs_mean")

    def digest(self) -> str:
        return hashlib.sha256(records_csv(self.records).encode() + manifest_json(self).encode()).hexdigest()


def _layer_keep_fraction(convention: str, s_target: float, n_cur: int) -> float:
    """Measurement fraction for a layer at cumulative sparsity ``s_target``.

    ``keep``: ``n_meas = ceil(n_cur * (1 - s_target))``.  ``sparsity``:
    ``n_meas = ceil(n_cur * s_target)``, at least one row.
    """
    if convention == "keep":
        return 1.0 - s_target
    return max(s_target, 1.0 / n_cur)


def _strategy_decision(cfg, net, j, s_step, s_target, rng):
    w_prev, w_next = net.layers[j].weights, net.layers[j + 1].weights
    n_cur = w_prev.shape[1]
    keep_fraction = _layer_keep_fraction(cfg.measurement, s_target, n_cur)
    if cfg.strategy == "dtc":
        return dtc_select(w_prev, w_next, s_step, cfg.solver_settings(), rng, keep_fraction, layer_idx=j)
    if cfg.strategy == "magnitude":
        dec = magnitude_select(w_prev, w_next, s_step, layer_idx=j)
    else:
        dec = random_select(n_cur, s_step, rng.child("random"), layer_idx=j)
        dec.ray_prev, dec.ray_next = weight_rays_from_layer(w_prev, w_next)
    # the measurement vectors are instrumentation only for these strategies
    ens_p, ens_q = layer_measurements(dec.ray_prev, dec.ray_next, keep_fraction, rng)
    dec.measurement_prev, dec.measurement_next = ens_p.y, ens_q.y
    return dec


def run_experiment(cfg: RunConfig, train: Dataset | None = None, test: Dataset | None = None) -> RunResult:
    """Run the train-compress cycles described by ``cfg``.

    ``cycles == 0`` trains one window of ``batches_per_cycle`` batches and
    returns a single baseline record with sparsity 0.  Datasets are loaded
    from ``cfg.data_dir`` when not given.
    """
    if train is None or test is None:
        train, test = load_mnist(cfg.data_dir)
    rng = SeededRng(cfg.seed)
    n_classes = int(max(train.labels.max(), test.labels.max())) + 1
    sizes = [train.images.shape[1]] + [cfg.hidden_width] * cfg.hidden_layers + [n_classes]
    net = nn.build_network(sizes, rng, cfg.use_batchnorm, cfg.lr)
    batches = BatchIterator(train, cfg.batch_size, rng)
    initial = net.hidden_widths
    ecfg = cfg.entropy_config()
    targets = cfg.schedule_obj().targets(cfg.cycles) if cfg.cycles else []

    records, pre_clip, decisions, params, iters = [], [], [], [], []
    train_calls = compress_calls = 0

    def train_window():
        nonlocal train_calls
        for _ in range(cfg.batches_per_cycle):
            nn.train_step(net, *batches.next_batch())
            train_calls += 1

    if cfg.cycles == 0:
        train_window()
        acc = nn.evaluate(net, test.images, test.labels)
        records.append(CycleRecord(0, 0.0, acc, 0.0, 0.0, 0.0, 0.0, 0.0, train_calls, 0))
        pre_clip.append(acc)
        params.append(net.param_count())

    for cycle, s_target in enumerate(targets, start=1):
        train_window()
        pre_clip.append(nn.evaluate(net, test.images, test.labels))
        cycle_decisions = []
        for j in range(cfg.hidden_layers):
            s_step = clip_fraction(initial[j], net.layers[j].fan_out, s_target)
            dec = _strategy_decision(cfg, net, j, s_step, s_target, rng.child("compress", cycle, j))
            compress_calls += dec.solver_calls
            nn.remove_neurons(net, j, dec.keep)
            cycle_decisions.append(dec)
        if min(net.hidden_widths) == 1:
            log.warning("cycle %d: a hidden layer is down to a single neuron", cycle)

        acc = nn.evaluate(net, test.images, test.labels)
        g_prev = [gibbs_entropy(d.measurement_prev, ecfg) for d in cycle_decisions]
        g_next = [gibbs_entropy(d.measurement_next, ecfg) for d in cycle_decisions]
        records.append(
            CycleRecord(
                cycle=cycle,
                sparsity=1.0 - sum(net.hidden_widths) / sum(initial),
                test_accuracy=acc,
                gibbs_prev=mean_layer_entropy(g_prev),
                gibbs_next=mean_layer_entropy(g_next),
                gibbs_mean=mean_layer_entropy(g_prev + g_next),
                ray_total_prev=float(sum(d.ray_prev.sum() for d in cycle_decisions)),
                ray_total_next=float(sum(d.ray_next.sum() for d in cycle_decisions)),
                opt_calls_train=train_calls,
                opt_calls_compress=compress_calls,
            )
        )
        decisions.append([dict(d.summary(), keep=d.keep.tolist()) for d in cycle_decisions])
        iters.append([it for d in cycle_decisions for it in d.solver_iters])
        params.append(net.param_count())
        log.info("cycle %d: sparsity %.4f accuracy %.4f", cycle, records[-1].sparsity, acc)

    return RunResult(cfg, records, pre_clip, decisions, params, iters, train_calls, compress_calls, net)


def complexity_report(result: RunResult) -> dict:
    """Optimizer-call accounting for a finished run.

    ``full_train_compress_calls`` is the cost of reaching each of the run's
    sparsity levels with a separate training run of the same budget, with
    compression itself free.
    """
    cfg = result.config
    n_cycles = cfg.cycles
    layers = cfg.hidden_layers
    expected_compress = 2 * n_cycles * layers if cfg.strategy == "dtc" else 0
    train_compress = result.train_calls + result.compress_calls
    full = n_cycles * result.train_calls
    return {
        "strategy": cfg.strategy,
        "cycles": n_cycles,
        "layers": layers,
        "batches_per_cycle": cfg.batches_per_cycle,
        "train_calls": result.train_calls,
        "compress_calls": result.compress_calls,
        "expected_train_calls": max(n_cycles, 1) * cfg.batches_per_cycle,
        "expected_compress_calls": expected_compress,
        "train_compress_calls": train_compress,
        "full_train_compress_calls": full,
        "savings_ratio": (full / train_compress) if train_compress and full else None,
    }


# -- outputs --------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def records_csv(records) -> str:
    return _csv(CycleRecord.columns(), (r.as_row() for r in records))


def read_records_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        vals = {}
        for f in dataclasses.fields(CycleRecord):
            vals[f.name] = int(row[f.name]) if f.type in (int, "int") else float(row[f.name])
        out.append(CycleRecord(**vals))
    return out


def manifest_dict(result: RunResult) -> dict:
    return {
        "format": "dtc-run/1",
        "config": result.config.experiment_dict(),
        "config_digest": result.config_digest,
        "records_sha256": hashlib.sha256(records_csv(result.records).encode()).hexdigest(),
        "final_accuracy": result.final_accuracy,
        "pearson_acc_entropy": result.pearson_acc_entropy,
        "pearson_acc_entropy_prev": result.correlation("gibbs_prev"),
        "pearson_acc_entropy_next": result.correlation("gibbs_next"),
        "pre_clip_accuracy": result.pre_clip_accuracy,
        "param_counts": result.param_counts,
        "solver_iters": result.solver_iters,
        "complexity": complexity_report(result),
        "decisions": result.decisions,
    }


def manifest_json(result: RunResult) -> str:
    return json.dumps(manifest_dict(result), sort_keys=True, indent=2) + "\n"


def _write(path: Path, text: str) -> Path:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


def emit_outputs(result: RunResult, out_dir) -> list:
    """Write ``cycles.csv``, ``manifest.json`` and three plot-series files."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create {out}: {exc}") from exc
    recs = result.records
    return [
        _write(out / "cycles.csv", records_csv(recs)),
        _write(out / "manifest.json", manifest_json(result)),
        _write(
            out / "series_accuracy.csv",
            _csv(
                ["sparsity", "test_accuracy", "pre_clip_accuracy"],
                ([r.sparsity, r.test_accuracy, p] for r, p in zip(recs, result.pre_clip_accuracy)),
            ),
        ),
        _write(
            out / "series_entropy.csv",
            _csv(["sparsity", "gibbs_prev", "gibbs_next", "gibbs_mean"],
                 ([r.sparsity, r.gibbs_prev, r.gibbs_next, r.gibbs_mean] for r in recs)),
        ),
        _write(
            out / "series_rays.csv",
            _csv(["sparsity", "ray_total_prev", "ray_total_next"],
                 ([r.sparsity, r.ray_total_prev, r.ray_total_next] for r in recs)),
        ),
    ]


# -- strategy comparison ---------------------------------------------------

TABLE_ORDER = ("magnitude", "random", "dtc")


@dataclass
class Comparison:
    runs: dict  # (strategy, seed) -> RunResult
    strategies: list
    seeds: list

    def accuracy_matrix(self, strategy: str) -> np.ndarray:
        """``seeds x cycles`` test accuracies for one strategy."""
        return np.array([[r.test_accuracy for r in self.runs[strategy, s].records] for s in self.seeds])

    def sparsity(self) -> list:
        first = self.runs[self.strategies[0], self.seeds[0]]
        return [r.sparsity for r in first.records]

    def median(self, strategy: str) -> np.ndarray:
        return np.median(self.accuracy_matrix(strategy), axis=0)

    def spread(self, strategy: str) -> np.ndarray:
        acc = self.accuracy_matrix(strategy)
        return acc.max(axis=0) - acc.min(axis=0)

    def ordered_strategies(self) -> list:
        return [s for s in TABLE_ORDER if s in self.strategies]

    def table(self) -> list:
        """Rows of ``[sparsity, median accuracy per strategy...]``."""
        cols = [self.median(s) for s in self.ordered_strategies()]
        return [[sp] + [float(c[i]) for c in cols] for i, sp in enumerate(self.sparsity())]

    def table_csv(self) -> str:
        strategies = self.ordered_strategies()
        spreads = [self.spread(s) for s in strategies]
        header = ["sparsity"] + strategies + [f"{s}_spread" for s in strategies]
        rows = [row + [float(sp[i]) for sp in spreads] for i, row in enumerate(self.table())]
        return _csv(header, rows)


def _run_remote(cfg: RunConfig) -> RunResult:
    result = run_experiment(cfg)
    result.network = None
    return result


def compare_strategies(base_cfg: RunConfig, strategies, seeds, train=None, test=None, jobs: int = 1) -> Comparison:
    """Run every ``(strategy, seed)`` pair from the same base configuration.

    Runs are independent; with ``jobs > 1`` they execute in worker processes
    that each load the dataset from ``base_cfg.data_dir``.
    """
    strategies, seeds = list(strategies), list(seeds)
    if not strategies:
        raise ConfigError("compare: need at least one strategy")
    if not seeds:
        raise ConfigError("compare: need at least one seed")
    cfgs = {(st, sd): base_cfg.replace(strategy=st, seed=sd) for st in strategies for sd in seeds}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {key: pool.submit(_run_remote, c) for key, c in cfgs.items()}
            runs = {key: f.result() for key, f in futures.items()}
    else:
        if train is None or test is None:
            train, test = load_mnist(base_cfg.data_dir)
        runs = {key: run_experiment(c, train, test) for key, c in cfgs.items()}
    return Comparison(runs, strategies, seeds)


def emit_comparison(comp: Comparison, out_dir) -> list:
    out = Path(out_dir)
    paths = []
    for (st, sd), result in comp.runs.items():
        paths += emit_outputs(result, out / f"{st}-seed{sd}")
    paths.append(_write(out / "table.csv", comp.table_csv()))
    return paths
