"""Factorized vs per-metamer simulation time over a range of horizons.

Usage: python3 scripts/benchmark_scaling.py [--horizons 5,10,15,20] [--out benchmark.csv]
"""

from __future__ import annotations

import argparse

from fstm.benchmark import is_monotone, sweep, to_csv
from fstm.presets import extend_to_pa, load_preset


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizons", default="5,10,15,20")
    ap.add_argument("--pa-max", type=int, default=4)
    ap.add_argument("--branches", type=int, default=2)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--out", help="optional CSV path")
    args = ap.parse_args()

    params = extend_to_pa(load_preset("tree1")[0], args.pa_max)
    horizons = [int(h) for h in args.horizons.split(",")]
    points = sweep(params, horizons, args.pa_max, args.branches, args.repeats)
    for p in points:
        speed = f"{p.speedup:.1f}x" if p.speedup is not None else p.status
        print(f"horizon {p.horizon:3d}: {p.metamers:9d} metamers in {p.classes:4d} classes, {speed}")
    print(f"monotone: {is_monotone(points)}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(to_csv(points))


if __name__ == "__main__":
    main()
