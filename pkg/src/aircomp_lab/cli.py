"""Command-line entry point ``aircomp-lab``.

Subcommands::

    aircomp-lab run --config spec.toml --out results/ [--seed N] [--threads N]
    aircomp-lab bo-trace --config spec.toml [--out trace.csv] [--seed N]
    aircomp-lab fl --config fl.toml [--out fl.csv]
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import fedavg, harness

log = logging.getLogger("aircomp_lab")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aircomp-lab",
                                description="Over-the-air weighted averaging experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a radio-map sweep and write CSV results")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--out", required=True, type=Path, help="output directory")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--threads", type=int, default=1)

    trace = sub.add_parser("bo-trace", help="dump per-step optimiser diagnostics")
    trace.add_argument("--config", required=True, type=Path)
    trace.add_argument("--out", type=Path, help="CSV path (default: stdout)")
    trace.add_argument("--seed", type=int, help="override the master seed")

    fl = sub.add_parser("fl", help="run federated averaging with AirComp aggregation")
    fl.add_argument("--config", required=True, type=Path)
    fl.add_argument("--out", type=Path, help="CSV path (default: stdout)")
    return p


def _spec(args) -> harness.ExperimentSpec:
    spec = harness.load_spec(args.config)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    return spec


def _cmd_run(args) -> None:
    spec = _spec(args)
    args.out.mkdir(parents=True, exist_ok=True)
    records = harness.run_experiment(spec, threads=args.threads)
    trials, summary = harness.emit_csv(records, args.out / "trials.csv")
    latency = harness.emit_latency_csv(spec.system.num_nodes, args.out / "latency.csv")
    for path in (trials, summary, latency):
        print(path)


def _cmd_bo_trace(args) -> None:
    spec = _spec(args)
    if args.out is None:
        import tempfile

        with tempfile.TemporaryDirectory() as tmp:
            path = harness.run_bo_trace(spec, Path(tmp) / "trace.csv")
            sys.stdout.write(path.read_text(encoding="utf-8"))
    else:
        print(harness.run_bo_trace(spec, args.out))


def _cmd_fl(args) -> None:
    cfg = fedavg.fl_config_from_dict(harness.load_toml(args.config))
    results = fedavg.run_fl_grid(cfg)
    if args.out is None:
        import tempfile

        with tempfile.TemporaryDirectory() as tmp:
            path = fedavg.emit_fl_csv(results, Path(tmp) / "fl.csv")
            sys.stdout.write(path.read_text(encoding="utf-8"))
    else:
        print(fedavg.emit_fl_csv(results, args.out))


_COMMANDS = {"run": _cmd_run, "bo-trace": _cmd_bo_trace, "fl": _cmd_fl}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"aircomp-lab: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
