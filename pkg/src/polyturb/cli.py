"""Command-line front end.

Exit status: 0 when every gate passes, 2 when a gate fails, 1 on usage
or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from . import experiments as ex
from .kinetic_solver import MonitorViolation

SUBCOMMANDS = {
    "tau-sweep": "tau_sweep",
    "n-sweep": "n_sweep",
    "relax": "relax",
    "phase-diagram": "phase_diagram",
    "fene": "fene_compare",
    "spectral": "spectral_report",
    "transport-check": "transport_check",
    "validate-config": None,
}

EXIT_PASS, EXIT_USAGE, EXIT_GATE = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _u64(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("workers must be >= 1")
    return v


def build_parser():
    parser = _Parser(prog="polyturb", description="Polymer elongation in turbulence experiments.")
    parser.add_argument("--version", action="version", version=f"polyturb {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file (merged over the shipped defaults)")
        p.add_argument("--seed", type=_u64, help="master seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=_positive, help="maximum worker count")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a dotted config key (repeatable)")
    return parser


def _read(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ex.ConfigError(f"config file not found: {path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise ex.ConfigError(f"cannot read config {path}: {exc}") from exc


def resolve(args):
    """Effective :class:`ExperimentConfig` of parsed arguments."""
    kind = SUBCOMMANDS[args.subcommand]
    data = _read(args.config) if args.config else {}
    if not isinstance(data, dict):
        raise ex.ConfigError("config must be a JSON object")
    if kind is None:
        if "kind" not in data:
            raise ex.ConfigError("validate-config needs a config with a 'kind'")
    elif data.setdefault("kind", kind) != kind:
        raise ex.ConfigError(f"config kind {data['kind']!r} does not match subcommand "
                             f"{args.subcommand!r}")
    return ex.resolve_config(data, args.overrides, seed=args.seed, output_dir=args.out,
                             workers=args.workers)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ex.ConfigError as exc:
        print(f"polyturb: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.subcommand == "validate-config":
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return EXIT_PASS
    try:
        result = ex.run_experiment(cfg)
    except ex.ConfigError as exc:
        print(f"polyturb: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ex.NonStationary, MonitorViolation) as exc:
        print(f"polyturb: gate failure: {exc}", file=sys.stderr)
        return EXIT_GATE
    print(result.report())
    return EXIT_PASS if result.passed else EXIT_GATE


if __name__ == "__main__":
    sys.exit(main())
