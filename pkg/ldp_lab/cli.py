"""Command-line front end: one subcommand per experiment kind, plus compare."""

from __future__ import annotations

import argparse
import logging
import sys

from ldp_lab import __version__
from ldp_lab.artifacts import compare
from ldp_lab.config import KINDS, load_config
from ldp_lab.errors import ConfigInvalid, ManifestMissing
from ldp_lab.runner import EXIT_INVALID, EXIT_OK, run

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldp-lab", description="Large-deviation numerical lab")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="RNG seed (overrides the config)")
        p.add_argument("--workers", type=int, help="parallel estimation cells")
        p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("compare", help="diff the CSV outputs of two run directories")
    p.add_argument("run_dir_a")
    p.add_argument("run_dir_b")
    p.add_argument("--tolerance", type=float, default=0.0)
    p.add_argument("--stderr-multiple", type=float, default=0.0,
                   help="extra slack per row in units of the larger std_err")
    p.add_argument("--verbose", action="store_true")
    return parser


def _compare(args) -> int:
    try:
        report = compare(args.run_dir_a, args.run_dir_b, args.tolerance, args.stderr_multiple)
    except ManifestMissing as e:
        logger.error("[compare] %s", e)
        return EXIT_INVALID
    if report.passed:
        print("[compare] no differences beyond tolerance")
        return EXIT_OK
    print(f"[compare] {len(report.flagged)} cells differ beyond tolerance")
    print(report.flagged.to_string(index=False))
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)

    if args.command == "compare":
        return _compare(args)
    try:
        cfg = load_config(args.config)
        if cfg.kind != args.command:
            raise ConfigInvalid(f"config kind {cfg.kind!r} does not match subcommand {args.command!r}")
        cfg = cfg.with_overrides(seed=args.seed, workers=args.workers, output_dir=args.out)
    except ConfigInvalid as e:
        logger.error("[config] %s", e)
        return EXIT_INVALID
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
