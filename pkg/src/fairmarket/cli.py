"""Command line entry point: ``fairmarket run | verify | defaults | scenarios``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import config as cfgmod
from .errors import ConfigError
from .sim import POLICIES

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 0, 2, 3, 4


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--scenario", choices=sorted(cfgmod.SCENARIOS), help="built-in setting")
    p.add_argument("--seed", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--method", action="append", choices=POLICIES,
                   help="policy to run (repeatable; default: all four)")
    p.add_argument("--iterations", type=int)
    p.add_argument("--slots", type=int)
    p.add_argument("--refresh", type=int, help="dual refresh period in iterations")


def build_spec(args) -> cfgmod.ExperimentSpec:
    """Scenario, then config file, then flags; later sources override earlier ones."""
    data: dict = {}
    if args.scenario:
        data = cfgmod.scenario_dict(args.scenario)
    if args.config:
        data = cfgmod.merge(data, cfgmod.load_config(args.config))
    sim = {k: v for k, v in (("seed", args.seed), ("n_iterations", args.iterations),
                             ("m_slots", args.slots), ("dual_refresh_epochs", args.refresh))
           if v is not None}
    exp = {k: v for k, v in (("replicates", args.replicates), ("out_dir", args.out),
                             ("methods", args.method)) if v is not None}
    for flag in ("write_logs", "strict"):
        if getattr(args, flag, None) is not None:
            exp[flag] = getattr(args, flag)
    data = cfgmod.merge(data, {"simulation": sim, "experiment": exp})
    return cfgmod.spec_from_dict(data)


def cmd_run(args) -> int:
    from .runner import run_experiment

    spec = build_spec(args)
    progress = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    result = run_experiment(spec, progress)
    table = result.paths.get("summary_table") or result.paths.get("rows_table")
    with open(table) as fh:
        print(fh.read(), end="")
    print(f"wrote {result.paths['metrics']}")
    if spec.strict and result.failures:
        print(f"solver stayed infeasible after retry: {json.dumps(result.failures, sort_keys=True)}",
              file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_verify(args) -> int:
    from .runner import verify

    try:
        spec = build_spec(args)
    except ConfigError as exc:
        print(f"FAIL  {'config':<12} {exc}")
        return EXIT_CONFIG
    report = verify(spec)
    for name, ok, detail in report:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<12} {detail}")
    return EXIT_OK if all(ok for _, ok, _ in report) else EXIT_VERIFY


def cmd_defaults(args) -> int:
    print(json.dumps(cfgmod.defaults_dict(), indent=2))
    return EXIT_OK


def cmd_scenarios(args) -> int:
    for name, data in sorted(cfgmod.SCENARIOS.items()):
        sim = data["simulation"]
        print(f"{name:<14} m={sim['m_slots']:<3} refresh={sim['dual_refresh_epochs']:<3} "
              f"replicates={data['experiment']['replicates']}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairmarket", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="simulate the configured methods and write metric tables")
    _add_common(run)
    logs = run.add_mutually_exclusive_group()
    logs.add_argument("--logs", dest="write_logs", action="store_const", const=True,
                      help="write per-method session logs (default: only for single runs)")
    logs.add_argument("--no-logs", dest="write_logs", action="store_const", const=False)
    run.add_argument("--strict", action="store_const", const=True,
                     help="exit nonzero when a solve stays infeasible after the tolerance retry")
    run.add_argument("-q", "--quiet", action="store_true")
    run.set_defaults(func=cmd_run)
    ver = sub.add_parser("verify", help="run the built-in self-check suites")
    _add_common(ver)
    ver.set_defaults(func=cmd_verify)
    sub.add_parser("defaults", help="print the complete default configuration").set_defaults(func=cmd_defaults)
    sub.add_parser("scenarios", help="list built-in scenarios").set_defaults(func=cmd_scenarios)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
