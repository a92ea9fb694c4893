"""Wall-time comparison of the factorized engine against per-metamer simulation.

Each sweep point runs both simulations on the same rules and parameters and
keeps the fastest of a few repeats. The explicit run includes tree expansion,
since materializing the tree is part of what factorization avoids.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

from .config import ModelParameters, OrganogenesisRules
from .engine import simulate
from .reference import simulate_explicit
from .structure import ExpansionTooLarge, build_counts, node_cap

INFEASIBLE = "explicit-infeasible"


@dataclass
class BenchmarkPoint:
    horizon: int
    pa_max: int
    branches: int
    metamers: int
    classes: int
    node_ratio: float
    factorized_seconds: float
    explicit_seconds: float | None
    speedup: float | None
    status: str


def best_time(fn: Callable[[], object], repeats: int) -> float:
    """Minimum wall time over ``repeats`` calls."""
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_point(
    params: ModelParameters, rules: OrganogenesisRules, repeats: int = 3, cap: int | None = None
) -> BenchmarkPoint:
    counts = build_counts(rules, params.needle_lifespan)
    metamers = counts.total_internodes
    classes = len(counts.multiplicity)
    t_fact = best_time(lambda: simulate(params, rules), repeats)
    cap = node_cap() if cap is None else cap
    t_expl: float | None = None
    status = "ok"
    if metamers > cap:
        status = INFEASIBLE
    else:
        try:
            t_expl = best_time(lambda: simulate_explicit(params, rules), repeats)
        except (ExpansionTooLarge, MemoryError):
            status = INFEASIBLE
    n_b = rules.branches_per_cycle[0] if rules.branches_per_cycle else 0
    return BenchmarkPoint(
        rules.horizon,
        rules.pa_max,
        n_b,
        metamers,
        classes,
        metamers / classes,
        t_fact,
        t_expl,
        t_expl / t_fact if t_expl is not None else None,
        status,
    )


def sweep(
    params: ModelParameters,
    horizons: Sequence[int] = (5, 10, 15, 20),
    pa_max: int = 4,
    branches: int = 2,
    repeats: int = 3,
    cap: int | None = None,
) -> list[BenchmarkPoint]:
    """Benchmark one rule family over several horizons.

    ``params`` must cover ``pa_max`` physiological ages; every PA below the
    last bears ``branches`` laterals per metamer.
    """
    points = []
    for h in horizons:
        rules = OrganogenesisRules(pa_max, (branches,) * (pa_max - 1), h)
        points.append(run_point(params, rules, repeats, cap))
    return points


def is_monotone(points: Sequence[BenchmarkPoint]) -> bool:
    """True when every feasible speedup is at least the previous one."""
    speedups = [p.speedup for p in sorted(points, key=lambda p: p.horizon) if p.speedup is not None]
    return all(b >= a for a, b in zip(speedups, speedups[1:]))


def to_csv(points: Sequence[BenchmarkPoint]) -> str:
    buf = io.StringIO()
    names = list(BenchmarkPoint.__dataclass_fields__)
    writer = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
    writer.writeheader()
    for p in points:
        row = asdict(p)
        writer.writerow({k: "" if v is None else v for k, v in row.items()})
    return buf.getvalue()
