"""Run the reduced desk presets and print the headline errors.

    python3 scripts/run_lite.py                 # everything (about 1.5 h on one core)
    python3 scripts/run_lite.py inverse fdm     # a subset
"""
import sys
import time

from bofpinn.config import resolve_config
from bofpinn.harness import run_experiment

JOBS = {
    "kl": ("rd1d-forcing-static", "kl-modes"),
    "oracle": ("rd1d-manufactured", "dry-run-oracle"),
    "crossing": ("rd1d-manufactured", "train"),
    "qmcbo": ("rd1d-forcing-static", "solve-qmc-bo"),
    "fdm": ("appD-deterministic", "solve-fdm"),
    "fpinn": ("appD-deterministic", "train-fpinn"),
    "inverse": ("rd1d-inverse", "train-inverse"),
    "transfer": ("rd1d-transfer", "transfer"),
    "evolving": ("rd1d-forcing-evolving", "train"),
    "rd2d": ("rd2d", "train"),
}


def main(names):
    for name in names or JOBS:
        tag, mode = JOBS[name]
        cfg = resolve_config({"tag": tag, "lite": True, "out": f"runs/{name}"})
        t0 = time.perf_counter()
        rep = run_experiment(cfg, mode)
        print(f"== {name} ({tag}, {mode}) {time.perf_counter() - t0:.0f} s -> {cfg.out}")
        for k, v in sorted(rep.errors.items()):
            print(f"   {k:24s} {v:.4e}")
        if rep.recovered:
            print("   recovered", rep.recovered)
        if "modes" in rep.info:
            print("   modes", rep.info["modes"])


if __name__ == "__main__":
    main(sys.argv[1:])
