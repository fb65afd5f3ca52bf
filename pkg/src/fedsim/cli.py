"""Command-line entry point: ``fedsim run | compare | gen-data | inspect``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import compression, engine
from .config import RunConfig, load_config, load_sweep, parse_pairs
from .data import write_csv
from .errors import ConfigError, DivergenceError, FedSimError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

log = logging.getLogger("fedsim")


def _with_cli_overrides(cfg: RunConfig, args, out_is_run_dir: bool = True) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["run.seed"] = args.seed
    if out_is_run_dir and getattr(args, "out", None) is not None:
        overrides["run.out"] = args.out
    if getattr(args, "workers", None) is not None:
        overrides["fl.workers"] = args.workers
    return cfg.with_overrides(overrides) if overrides else cfg


def cmd_run(args) -> int:
    cfg = _with_cli_overrides(load_config(args.config), args)
    result = engine.run(cfg)
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    result.write_csv(out / "metrics.csv")
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    last = result.records[-1]
    print(f"{len(result.records)} rounds  train_loss={last.train_loss:.6g}  eval_acc={last.eval_acc:.4f}  "
          f"sim_seconds={last.sim_seconds:.6g}  bytes_up={last.bytes_up}")
    print(f"metrics written to {out / 'metrics.csv'}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _with_cli_overrides(load_config(args.config), args, out_is_run_dir=False)
    sweep = load_sweep(args.sweep)
    rows = engine.compare(cfg, sweep)
    table = engine.comparison_csv(rows)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    print(f"# target loss = {cfg.run.target_fraction} x initial training loss")
    sys.stdout.write(table)
    return EXIT_DIVERGED if any(r.error.startswith("DivergenceError") for r in rows) else EXIT_OK


def cmd_gen_data(args) -> int:
    try:
        text = Path(args.spec).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read data spec {args.spec}: {exc}") from None
    overrides = dict(parse_pairs(text, args.spec))
    bad = [k for k in overrides if not (k.startswith("data.") or k == "run.seed")]
    if bad:
        raise ConfigError(f"gen-data spec accepts only data.* keys and run.seed, got {bad}")
    cfg = RunConfig().with_overrides(overrides)
    if args.seed is not None:
        cfg = cfg.with_overrides({"run.seed": args.seed})
    data = engine.load_dataset(cfg)
    write_csv(data, args.out)
    print(f"wrote {len(data)} rows x {data.input_dim} features ({data.num_classes} classes) to {args.out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    cfg = _with_cli_overrides(load_config(args.config), args)
    sys.stdout.write(cfg.to_text())
    sim = engine.Simulation(cfg)
    layout = sim.spec.layout
    identity = compression.serialized_size(compression.CompressionScheme("identity"), layout)
    upload = compression.serialized_size(sim.scheme, layout)
    print()
    print(f"# model: {sim.spec.kind}, {sim.spec.dim} parameters")
    for e in layout:
        print(f"#   {e.name:<14} offset={e.offset:<6} shape={e.rows}x{e.cols}")
    print(f"# data: {len(sim.train)} train / {len(sim.eval)} eval rows; "
          f"shard sizes {[s.n_examples for s in sim.shards]}")
    print(f"# payload: downlink {identity} bytes/client, uplink {upload} bytes/client "
          f"under {sim.scheme} ({upload / identity:.3f} of uncompressed)")
    nets = [p.network for p in sim.profiles]
    print(f"# network: {nets.count('3g')} x 3G, {nets.count('4g')} x 4G")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsim", description="Desk-scale federated learning simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one simulation and write metrics.csv")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, help="threads for per-round client work")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run a sweep of config overrides and tabulate them")
    p.add_argument("--config", required=True)
    p.add_argument("--sweep", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="also write the table to this CSV file")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gen-data", help="write a synthetic dataset to CSV")
    p.add_argument("--spec", required=True, help="file of data.* keys (same format as configs)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("inspect", help="print the resolved config and payload sizes")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"fedsim: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FedSimError as exc:
        print(f"fedsim: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
