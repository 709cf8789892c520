"""Command-line driver.

Exit codes: 0 success, 2 configuration error, 3 numeric fault during a run,
4 one or more sweep items failed.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ScenarioConfig, apply_overrides, from_dict, parse_config, parse_value, to_dict
from .errors import ConfigError, CrosslightError, DegenerateDataError, NumericFault, SimulationAbort
from .estimation import fit_occupancy_params, fit_report, samples_from_trace
from .harness import run_scenario, sweep, train_thresholds
from .serialize import emit_report, emit_toml, emit_trace, read_toml, read_trace, run_report, sweep_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_PARTIAL = 4

log = logging.getLogger("crosslight")


def _load(args) -> ScenarioConfig:
    params = read_toml(args.params) if getattr(args, "params", None) else None
    return parse_config(args.config, overrides=args.override, seed=args.seed, params=params)


def cmd_validate(args) -> int:
    cfg = _load(args)
    print(f"{args.config}: ok ({cfg.name}, {cfg.n_steps} steps, detector={cfg.detector.kind})")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    result = run_scenario(cfg)
    emit_trace(result.trace, out / "trace.csv")
    emit_report(run_report(result, cfg), out / "report.json")
    log.info("wrote %s", out)
    return EXIT_OK


def parse_grid(specs) -> list[tuple[str, list]]:
    axes = []
    for axis in specs or ():
        if "=" not in axis:
            raise ConfigError(f"grid axis {axis!r} is not KEY=v1,v2,...", axis)
        key, raw = axis.split("=", 1)
        values = [parse_value(v.strip()) for v in raw.split(",") if v.strip()]
        if not values:
            raise ConfigError("grid axis has no values", key)
        axes.append((key.strip(), values))
    return axes


def build_sweep(base: ScenarioConfig, axes, n_seeds: int):
    """Grid points times seeds ``base.seed .. base.seed + n_seeds - 1``."""
    configs, params = [], []
    keys = [k for k, _ in axes]
    for combo in itertools.product(*(v for _, v in axes)):
        data = to_dict(base)
        apply_overrides(data, list(zip(keys, combo)))
        point = from_dict(data)
        for s in range(n_seeds):
            configs.append(point.replace(seed=base.seed + s))
            params.append(dict(zip(keys, combo)))
    return configs, params


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if args.seeds < 1:
        raise ConfigError("must be >= 1", "--seeds")
    configs, params = build_sweep(cfg, parse_grid(args.grid), args.seeds)
    items = sweep(configs, parallelism=args.workers, params=params)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    emit_report(sweep_report(items), out / "report.json")
    failed = [it for it in items if it.status != "ok"]
    for it in failed:
        print(f"item {it.index} (seed {it.seed}) failed: {it.error}", file=sys.stderr)
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_train_threshold(args) -> int:
    cfg = _load(args)
    thresholds, _ = train_thresholds(cfg)
    emit_toml(
        {
            "detector": {
                "threshold": list(thresholds),
                "kappa": cfg.detector.kappa,
                "train_cycles": cfg.detector.train_cycles,
            }
        },
        args.output,
    )
    return EXIT_OK


def cmd_fit_params(args) -> int:
    trace = read_trace(args.trace)
    recs = []
    for pair in (0, 1):
        fit = fit_occupancy_params(samples_from_trace(trace, pair))
        if fit.excluded:
            log.info("pair %d: %d clamped samples excluded", pair, fit.excluded)
        recs.append(fit_report(fit))
    emit_toml({"pairs": recs}, args.output)
    return EXIT_OK


def _common(p: argparse.ArgumentParser, config=True):
    if config:
        p.add_argument("-c", "--config", required=True, help="scenario TOML file")
        p.add_argument(
            "--override", action="append", default=[], metavar="KEY=VALUE",
            help="dotted override, e.g. attack.enabled=false or pairs.0.k=0.01 (repeatable)",
        )
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--params", default=None, help="fitted parameters file from fit-params")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crosslight", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario, write trace.csv and report.json")
    _common(p)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a grid of scenarios over several seeds")
    _common(p)
    p.add_argument("--grid", action="append", default=[], metavar="KEY=v1,v2,...")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train-threshold", help="train per-pair thresholds on a benign run")
    _common(p)
    p.add_argument("-o", "--output", required=True, help="TOML file with a [detector] table")
    p.set_defaults(func=cmd_train_threshold)

    p = sub.add_parser("fit-params", help="fit k, beta, lambda from a trace CSV")
    p.add_argument("--trace", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_fit_params)

    p = sub.add_parser("validate", help="parse and check a scenario file")
    _common(p)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationAbort, NumericFault) as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DegenerateDataError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CrosslightError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
