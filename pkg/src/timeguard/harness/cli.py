"""Command-line entry point: ``timeguard run | matrix | sweep-load | scenarios``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..attacks import ScenarioCell, all_cells, load_catalogue
from .config import ConfigError, ExperimentConfig, load_config
from .metrics import ReportFormat, emit_report
from .runner import (
    LOADED_BASE,
    MATRIX_BASE,
    is_monotone,
    run_experiment,
    run_matrix,
    sweep_load,
)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_SCENARIO = 3


def _base_config(args: argparse.Namespace, default: ExperimentConfig) -> ExperimentConfig:
    config = load_config(Path(args.config)) if args.config else default
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.minutes is not None:
        changes["run_minutes"] = args.minutes
    if getattr(args, "scenario", None):
        if args.scenario.strip().lower() not in load_catalogue():
            raise ConfigError(f"unknown scenario {args.scenario!r}; see 'timeguard scenarios'")
        cell = ScenarioCell.parse(args.scenario)
        changes["scenario"] = cell
        changes["forgeable_agents"] = cell.forgeable
    return config.with_(**changes) if changes else config


def cmd_run(args: argparse.Namespace) -> int:
    if args.transport == "datagram-loopback":
        from .loopback import run_loopback

        res = run_loopback(minutes=args.minutes or 1, agents=args.agents, seed=args.seed or 0)
        print(f"loopback: rounds={res.rounds} downs={res.downs_sent} ups={res.ups_received} "
              f"verdicts={res.verdicts}")
        return EXIT_OK if res.ups_received == res.downs_sent else EXIT_FAIL
    config = _base_config(args, ExperimentConfig())
    report = run_experiment(config)
    if args.csv == "-":
        sys.stdout.write(emit_report(report, ReportFormat.CSV))
        return EXIT_OK
    if args.csv:
        Path(args.csv).write_text(emit_report(report, ReportFormat.CSV))
    sys.stdout.write(emit_report(report, ReportFormat.SUMMARY))
    return EXIT_OK


def cmd_matrix(args: argparse.Namespace) -> int:
    base = MATRIX_BASE
    if args.minutes is not None:
        base = base.with_(run_minutes=args.minutes)
    results = run_matrix(seed=args.seed or 0, base=base)
    for r in results:
        print(r.line())
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} cells conform")
    return EXIT_OK if passed == len(results) else EXIT_SCENARIO


def cmd_sweep_load(args: argparse.Namespace) -> int:
    config = _base_config(args, LOADED_BASE)
    points = sweep_load(config, args.congestion_steps)
    print("congestion_factor,timeouts")
    for p in points:
        print(f"{p.congestion_factor:g},{p.timeouts}")
    ok = is_monotone(points)
    print("monotone" if ok else "NOT monotone")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_scenarios(args: argparse.Namespace) -> int:
    catalogue = load_catalogue()
    for cell in all_cells():
        entry = catalogue[cell.cell_id]
        print(f"{entry['id']:<52} {entry['outcome']:<14} {entry['note']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timeguard", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", metavar="PATH", help="flat key: value config file")
        p.add_argument("--seed", type=int, help="run seed (default 0)")
        p.add_argument("--minutes", type=int, help="virtual run length in minutes")

    run = sub.add_parser("run", help="run one seeded experiment")
    common(run)
    run.add_argument("--csv", metavar="PATH", help="write the CSV report here ('-' for stdout)")
    run.add_argument("--scenario", metavar="CELL", help="scenario id, e.g. unforgeable/guest-time/malicious-host/honest-guest")
    run.add_argument("--transport", choices=("sim", "datagram-loopback"), default="sim")
    run.add_argument("--agents", type=int, default=4, help="agents for the loopback transport")
    run.set_defaults(func=cmd_run)

    matrix = sub.add_parser("matrix", help="check all 16 scenario cells against their expectations")
    matrix.add_argument("--seed", type=int)
    matrix.add_argument("--minutes", type=int)
    matrix.set_defaults(func=cmd_matrix)

    sweep = sub.add_parser("sweep-load", help="ramp congestion and check timeout growth")
    common(sweep)
    sweep.add_argument("--congestion-steps", type=int, default=4,
                       help="number of doublings starting at factor 1 (default 4: 1,2,4,8)")
    sweep.set_defaults(func=cmd_sweep_load)

    scen = sub.add_parser("scenarios", help="print the scenario catalogue")
    scen.set_defaults(func=cmd_scenarios)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "congestion_steps", 1) < 1:
        print("error: --congestion-steps must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
