"""Fit one tree from pattern-1 and from pattern-2 targets and report wall times.

Usage: python3 scripts/compare_patterns.py [--tree tree2] [--factor 1.5]

Both fits start from ``factor`` x truth for every free parameter.
"""

from __future__ import annotations

import argparse
import json

from fstm.calibration import compare_patterns, make_problem
from fstm.engine import simulate
from fstm.patterns import extract_pattern
from fstm.presets import FITTED, load_preset


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tree", choices=sorted(FITTED), default="tree2")
    ap.add_argument("--factor", type=float, default=1.5)
    args = ap.parse_args()

    params, rules = load_preset(args.tree)
    trace = simulate(params, rules)
    start = {n: v * args.factor for n, v in FITTED[args.tree].items()}
    problems = [make_problem(params, rules, extract_pattern(trace, p), start) for p in (1, 2)]
    report = compare_patterns(*problems)
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
