"""Command line entry point.

    python3 -m bofpinn.cli train --config runs/man.cfg --set train.adam_iters=2000
    python3 -m bofpinn.cli solve-qmc-bo --tag rd1d-manufactured --lite

Exit codes: 0 success, 2 configuration error, 3 numerical failure (divergence,
eigenvalue crossing, non-finite solutions).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, format_config, load_config, parse_config_text, resolve_config
from .harness import MODES, run_experiment

log = logging.getLogger("bofpinn")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _parser():
    ap = argparse.ArgumentParser(prog="bofpinn", description="BO-fPINN experiments")
    sub = ap.add_subparsers(dest="mode", required=True)
    for m in MODES:
        p = sub.add_parser(m)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--tag", help="benchmark tag (overrides the file)")
        p.add_argument("--lite", action="store_true", help="use the reduced desk preset")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--checkpoint", help="checkpoint for eval")
        p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _overrides(args) -> dict:
    ov = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        ov.update(parse_config_text(item))
    if args.tag:
        ov["tag"] = args.tag
    if args.lite:
        ov["lite"] = True
    if args.out:
        ov["out"] = args.out
    if args.seed is not None:
        ov["seed"] = args.seed
    return ov


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        file_vals = load_config(args.config) if args.config else {}
        cfg = resolve_config(file_vals, _overrides(args))
    except (ConfigError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.print_config:
        sys.stdout.write(format_config(cfg))
        return EXIT_OK
    try:
        rep = run_experiment(cfg, args.mode, checkpoint=args.checkpoint)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, ArithmeticError, RuntimeError) as e:
        # CrossingDetected, SampleFailure, TrainingDiverged, FpinnDiverged
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    for k, v in rep.errors.items():
        print(f"{k}\t{v:.6e}")
    for k, v in rep.info.items():
        if isinstance(v, (int, float, str, bool)):
            print(f"{k}\t{v}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
