"""Command line: validate, run, mc, compare."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from . import pipeline
from .config import ConfigError, RunConfig, bundled_configs, dump_config, load_config
from .generator import GeneratorError
from .grid import GridError
from .matching import FeasibilityError
from .spectral import BoundaryError, SpectralError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FEASIBILITY = 3
EXIT_BOUNDARY = 4
EXIT_NUMERIC = 5


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    updates = {}
    if getattr(args, "seed", None) is not None:
        if cfg.mc is None:
            raise ConfigError("--seed given but the config has no mc block")
        updates["mc"] = cfg.mc.model_copy(update={"seed": args.seed})
    if getattr(args, "threads", None) is not None:
        updates["threads"] = args.threads
    return cfg.model_copy(update=updates) if updates else cfg


def _out_dir(args, cfg: RunConfig) -> str:
    return args.out or cfg.output_dir


def cmd_validate(args) -> int:
    cfg = _load(args)
    res = pipeline.resolve(cfg, raise_errors=False)
    for line in pipeline.validation_summary(res):
        print(line)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        dump_config(res.resolved_config(), Path(args.out) / "resolved_config.yaml")
    problems = res.problems
    print("status:", "ok" if not problems else "invalid")
    return EXIT_OK if not problems else EXIT_FEASIBILITY


def cmd_run(args) -> int:
    cfg = _load(args)
    out = pipeline.run(cfg, _out_dir(args, cfg), threads=args.threads, with_mc=not args.skip_mc)
    print(f"wrote results to {out}")
    return EXIT_OK


def cmd_mc(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    res = pipeline.run_mc(cfg, out, threads=args.threads)
    for (label, T), (v, se) in res.items():
        print(f"{label:32s} T={T:<5g} {v:.6f} ({se:.6f})")
    return EXIT_OK


def cmd_compare(args) -> int:
    n = pipeline.compare(args.spectral, args.mc, args.out)
    print(f"joined {n} rows into {args.out}")
    return EXIT_OK if n else EXIT_CONFIG


def cmd_list(args) -> int:
    for name, path in sorted(bundled_configs().items()):
        cfg = load_config(path)
        print(f"{name:20s} {cfg.description}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="volchain", description="Spectral pricing of realized-variance derivatives.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help="output directory (default: config output_dir)"):
        sp.add_argument("-c", "--config", required=True, help="config path or bundled config name")
        sp.add_argument("-o", "--out", help=out_help)
        sp.add_argument("--seed", type=int, help="override the Monte Carlo seed")
        sp.add_argument("-j", "--threads", type=int, help="worker threads")

    sp = sub.add_parser("validate", help="check a config and echo the resolved values")
    common(sp, "write resolved_config.yaml here")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("run", help="spectral prices, plus Monte Carlo if configured")
    common(sp)
    sp.add_argument("--skip-mc", action="store_true", help="do not run the Monte Carlo oracle")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("mc", help="Monte Carlo oracle only")
    common(sp)
    sp.set_defaults(func=cmd_mc)

    sp = sub.add_parser("compare", help="join spectral and Monte Carlo price tables")
    sp.add_argument("--spectral", required=True, help="prices.csv from run")
    sp.add_argument("--mc", required=True, help="mc_prices.csv from mc or run")
    sp.add_argument("-o", "--out", required=True, help="output CSV path")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("list", help="list bundled configs")
    sp.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValidationError, GridError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FeasibilityError, pipeline.LatticeError) as exc:
        print(f"feasibility error: {exc}", file=sys.stderr)
        return EXIT_FEASIBILITY
    except BoundaryError as exc:
        print(f"boundary guard: {exc}", file=sys.stderr)
        return EXIT_BOUNDARY
    except (SpectralError, GeneratorError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
