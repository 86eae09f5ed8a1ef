"""Command-line front end: experiment subcommands plus fixture verification.

Exit codes: 0 success, 2 configuration error (including flag/TOML
problems), 3 resource budget exceeded, 4 fixture verification failure.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__, harness
from .errors import ConfigError, ResourceBudgetError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_VERIFY = 4

_KIND_HELP = {
    "intersect": "exact vs predicted collision counts over a (d, a, R) grid",
    "partition": "partition-function replicas and exact second moments",
    "chaos": "per-order chaos terms and their variance check",
    "regime-map": "disorder-relevance classification table",
    "converge": "per-horizon statistics against the limit law",
    "fractional": "fractional-moment curve over a beta grid",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polytube",
        description="directed-polymer tube environments: exact transfer "
                    "recursions, Monte Carlo, and regime diagnostics")
    parser.add_argument("--version", action="version",
                        version=f"polytube {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in harness.KINDS:
        sp = sub.add_parser(kind, help=_KIND_HELP[kind])
        sp.add_argument("--config", required=True,
                        help="TOML experiment description")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--threads", type=int,
                        help="worker threads (default from config, else 1)")
        sp.add_argument("--out", help="output directory override")
    vp = sub.add_parser("verify",
                        help="re-run pinned configs against golden CSVs")
    vp.add_argument("fixtures", help="directory of fixture subdirectories")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            report = harness.verify(args.fixtures)
            print(report.summary())
            return EXIT_OK if report.ok else EXIT_VERIFY
        data = harness.load_toml(args.config)
        file_kind = data.get("kind")
        if file_kind is not None and file_kind != args.command:
            raise ConfigError(f"config file says kind={file_kind!r} but the "
                              f"subcommand is {args.command!r}")
        data["kind"] = args.command
        for flag in ("seed", "threads", "out"):
            value = getattr(args, flag)
            if value is not None:
                data[flag] = value
        cfg = harness.config_from_dict(data)
        result = harness.run(cfg)
        names = ", ".join(p.name for p in result.csv_paths)
        print(f"wrote {result.rows} rows to {names} in {result.out_dir} "
              f"({result.wall_seconds:.2f}s)")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceBudgetError as exc:
        print(f"resource budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
