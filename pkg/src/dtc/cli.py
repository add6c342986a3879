"""Command-line entry point: ``dtc run|compare|report|fetch-data``.

Failures print a one-line JSON object ``{"error": <class>, "message": ...}``
on stderr and exit with the class's status code.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import harness
from .data import fetch_mnist, load_mnist
from .errors import DTCError, OutputError
from .metrics import pearson, quasi_static_check
from .nn import save_checkpoint

_HELP = {
    "strategy": "neuron selection policy: dtc, magnitude or random",
    "cycles": "train-compress cycles (0 = baseline training only)",
    "batches_per_cycle": "training batches between compressions",
    "hidden_layers": "number of hidden layers of width --hidden-width",
    "schedule": "cumulative sparsity schedule: table, geometric, linear, custom",
    "schedule_rate": "keep ratio per cycle for the geometric schedule",
    "schedule_final": "final sparsity of the linear schedule",
    "schedule_values": "comma-separated targets for the custom schedule",
    "lambda_mode": "relative (scaled by ||theta^T y||_inf) or absolute",
    "lam": "L1 penalty weight",
    "measurement": "measurement count convention: keep (n = m(1-s)) or sparsity (n = m s)",
    "bins": "histogram bins for the Gibbs entropy",
    "data_dir": "directory holding the MNIST IDX files (default $DTC_DATA_DIR)",
}


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _add_config_flags(p: argparse.ArgumentParser, skip=()) -> None:
    defaults = harness.RunConfig()
    for f in dataclasses.fields(harness.RunConfig):
        if f.name in skip or f.name == "out_path":
            continue
        flag = "--" + f.name.replace("_", "-")
        default = getattr(defaults, f.name)
        kw = {"default": default, "help": _HELP.get(f.name, f.name.replace("_", " "))}
        if isinstance(default, bool):
            p.add_argument(flag, action=argparse.BooleanOptionalAction, **kw)
        elif isinstance(default, tuple):
            p.add_argument(flag, type=_floats, **kw)
        elif default is None:
            p.add_argument(flag, type=str, **kw)
        else:
            p.add_argument(flag, type=type(default), **kw)


def _config(args, **overrides) -> harness.RunConfig:
    names = {f.name for f in dataclasses.fields(harness.RunConfig)}
    values = {k: v for k, v in vars(args).items() if k in names}
    values.update(overrides)
    return harness.RunConfig(**values)


def _ints(text: str) -> list:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dtc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress per cycle")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="one train-compress experiment")
    _add_config_flags(run)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--checkpoint", help="write the final network to this .npz file")

    cmp_ = sub.add_parser("compare", help="several strategies and seeds, median accuracy per sparsity")
    _add_config_flags(cmp_, skip=("strategy", "seed"))
    cmp_.add_argument("--strategies", default="magnitude,random,dtc")
    cmp_.add_argument("--seeds", type=_ints, default=[0, 1, 2])
    cmp_.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    cmp_.add_argument("--out", required=True, help="output directory")

    rep = sub.add_parser("report", help="summarise an output directory written by `run`")
    rep.add_argument("path")
    rep.add_argument("--eps", type=float, default=0.02, help="accuracy step bound")
    rep.add_argument("--delta", type=float, default=0.5, help="entropy step bound (bits)")

    fetch = sub.add_parser("fetch-data", help="download the MNIST IDX files")
    fetch.add_argument("--data-dir", default=None)
    return parser


def _cmd_run(args) -> dict:
    cfg = _config(args, out_path=args.out)
    result = harness.run_experiment(cfg)
    harness.emit_outputs(result, args.out)
    if args.checkpoint:
        try:
            save_checkpoint(result.network, args.checkpoint, cfg.digest())
        except OSError as exc:
            raise OutputError(f"cannot write {args.checkpoint}: {exc}") from exc
    return {
        "out": args.out,
        "final_accuracy": result.final_accuracy,
        "pearson_acc_entropy": result.pearson_acc_entropy,
        "config_digest": result.config_digest,
    }


def _cmd_compare(args) -> dict:
    cfg = _config(args, out_path=args.out)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    train = test = None
    if args.jobs <= 1:
        train, test = load_mnist(cfg.data_dir)
    comp = harness.compare_strategies(cfg, strategies, args.seeds, train, test, jobs=args.jobs)
    harness.emit_comparison(comp, args.out)
    print(comp.table_csv(), end="")
    return {"out": args.out, "runs": len(comp.runs)}


def _cmd_report(args) -> dict:
    path = Path(args.path)
    records = harness.read_records_csv(path / "cycles.csv")
    manifest = json.loads((path / "manifest.json").read_text())
    acc = [r.test_accuracy for r in records]
    out = {"cycles": len(records), "final_accuracy": acc[-1] if acc else None}
    if len(records) >= 2:
        for col in ("gibbs_prev", "gibbs_next", "gibbs_mean"):
            try:
                out[f"pearson_acc_{col}"] = pearson(acc, [getattr(r, col) for r in records])
            except DTCError:
                out[f"pearson_acc_{col}"] = None
        out["manifest_pearson_matches"] = out["pearson_acc_gibbs_mean"] == manifest["pearson_acc_entropy"]
        qs = quasi_static_check(records, args.eps, args.delta)
        out["quasi_static"] = dataclasses.asdict(qs) | {"all_ok": qs.all_ok}
    out["complexity"] = manifest.get("complexity")
    return out


def _cmd_fetch(args) -> dict:
    return {"data_dir": str(fetch_mnist(args.data_dir))}


COMMANDS = {"run": _cmd_run, "compare": _cmd_compare, "report": _cmd_report, "fetch-data": _cmd_fetch}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        summary = COMMANDS[args.command](args)
    except DTCError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return exc.exit_status
    except FileNotFoundError as exc:
        print(json.dumps({"error": "not-found", "message": str(exc)}), file=sys.stderr)
        return 7
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
