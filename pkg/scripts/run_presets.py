"""Regenerate every figure preset as CSV under results/."""

import argparse
import time
from pathlib import Path

from harqdelay.experiments import PRESETS, preset, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--outdir", default="results")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("ids", nargs="*", help="preset ids (default: all)")
    args = ap.parse_args()
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.ids or sorted(PRESETS):
        t0 = time.perf_counter()
        run_experiment(preset(name, out=str(out / f"{name}.csv")), workers=args.workers)
        print(f"{name:<18} {time.perf_counter() - t0:6.1f}s -> {out / (name + '.csv')}")


if __name__ == "__main__":
    main()
