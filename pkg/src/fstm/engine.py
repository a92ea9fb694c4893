"""Growth-cycle simulation on the factorized tree.

One cycle runs, in order:

1. organogenesis: every living axis gains a metamer, new axis classes appear;
2. demand: organ demand of the new metamers plus the implicit ring demand,
   both funded by the previous cycle's production ``Q(i-1)``;
3. allocation to the new internodes and needle cohorts, then their lengths;
4. ring allocation over every living internode (uniform pool blended with
   the foliage-above rule by ``lambda_pressler``);
5. leaf area from the active needles, and production ``Q(i)``.

Production is computed last so that needles expanded during the cycle take
part in it; ``Q(0)`` is the seed biomass.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, ModelParameters, OrganogenesisRules, dumps_config, from_dict, validate
from .structure import AxisClassKey, StructureCounts, build_counts, leaves_above, needle_active


class SimulationError(RuntimeError):
    def __init__(self, cycle: int, message: str):
        self.cycle = cycle
        super().__init__(f"cycle {cycle}: {message}")


# --- per-cycle primitives -------------------------------------------------


def compute_production(leaf_area: float, params: ModelParameters, cycle: int) -> float:
    """Biomass produced during ``cycle`` by ``leaf_area`` m² of active needles."""
    s_p = params.s_p
    return params.env_at(cycle) * s_p / params.r * -math.expm1(-params.k_beer * leaf_area / s_p)


def solve_ring_demand(d_org: float, q_prev: float, p0: float, p1: float) -> tuple[float, float]:
    """Ring demand ``x`` solving ``x = p0 + p1 * q_prev / (d_org + x)``.

    Clearing the denominator gives ``x**2 + (d_org - p0) x - (p0 d_org + p1 q_prev) = 0``,
    whose constant term is non-positive, so exactly one root is non-negative.

    Returns:
        ``(d_rg, d_total)``; both zero when there is no demand at all.
    """
    if p1 * q_prev == 0.0:
        return p0, d_org + p0
    b = d_org - p0
    c = p0 * d_org + p1 * q_prev
    if c <= 0.0:
        x = max(-b, 0.0)
    elif b >= 0.0:
        # avoids cancellation in -b + sqrt(b^2 + 4c)
        x = 2.0 * c / (b + math.sqrt(b * b + 4.0 * c))
    else:
        x = 0.5 * (-b + math.sqrt(b * b + 4.0 * c))
    return x, d_org + x


def allocate_new_organs(
    new_counts: dict[tuple[str, int], int],
    params: ModelParameters,
    q_prev: float,
    d_total: float,
) -> dict[tuple[str, int], float]:
    """Biomass given to each new organ, keyed by ``(kind, pa)``.

    ``kind`` is ``"needle"`` or ``"internode"``. Every organ gets its sink
    times ``q_prev / d_total``; ``new_counts`` only decides which keys appear.
    """
    if d_total <= 0.0:
        return {key: 0.0 for key in new_counts}
    ratio = q_prev / d_total
    sinks = {"needle": params.sink_needle, "internode": params.sink_internode}
    return {(kind, k): sinks[kind][k - 1] * ratio for (kind, k) in new_counts}


def allocate_rings(
    weights: np.ndarray,
    foliage: np.ndarray,
    multiplicity: np.ndarray,
    lam: float,
    q_rg: float,
) -> tuple[np.ndarray, float, float]:
    """Split the ring biomass ``q_rg`` over internode positions.

    Args:
        weights: ``p_rg(k) * length`` per position.
        foliage: foliage above each position.
        multiplicity: number of identical copies of each position.
        lam: weight of the foliage-above rule against the uniform pool.
        q_rg: biomass available for rings this cycle.

    Returns:
        ``(increments, d_pool, d_pressler)``. Increments are per single copy;
        ``sum(multiplicity * increments) == q_rg``. With no foliage anywhere
        the foliage term is dropped and the pool term takes all of ``q_rg``.
    """
    d_pool = float(np.dot(multiplicity, weights))
    d_pressler = float(np.dot(multiplicity, foliage * weights))
    if q_rg == 0.0:
        return np.zeros_like(weights), d_pool, d_pressler
    if d_pool <= 0.0:
        raise ValueError("ring biomass to allocate but no internode has ring sink")
    if lam > 0.0 and d_pressler > 0.0:
        share = (1.0 - lam) / d_pool + lam * foliage / d_pressler
    else:
        share = np.full_like(weights, 1.0 / d_pool)
    return share * weights * q_rg, d_pool, d_pressler


def apply_allometry(q_e, b: float, beta: float):
    """Internode length (cm) from its primary biomass (g): ``b * q_e**beta``."""
    q_e = np.asarray(q_e, dtype=float)
    out = np.where(q_e > 0.0, b * np.power(np.where(q_e > 0.0, q_e, 1.0), beta), 0.0)
    return float(out) if out.ndim == 0 else out


def radius_from_biomass(q_total, length, wood_density: float):
    """Cylinder radius (cm) holding ``q_total`` g of wood over ``length`` cm."""
    q_total = np.asarray(q_total, dtype=float)
    length = np.asarray(length, dtype=float)
    ok = length > 0.0
    vol = q_total / wood_density
    out = np.where(ok, np.sqrt(vol / (math.pi * np.where(ok, length, 1.0))), 0.0)
    return float(out) if out.ndim == 0 else out


# --- state ----------------------------------------------------------------


@dataclass
class AxisClassState:
    """Shared state of every axis of one ``(pa, birth_cycle)`` class.

    Arrays are preallocated to the class's final metamer count; only the
    first ``n`` entries are live. Masses are for a single axis.
    """

    key: AxisClassKey
    multiplicity: int
    internode: np.ndarray
    ring: np.ndarray
    length: np.ndarray
    needle: np.ndarray
    n: int = 0

    @classmethod
    def empty(cls, key: AxisClassKey, multiplicity: int, horizon: int) -> "AxisClassState":
        size = horizon - key.birth_cycle + 1
        return cls(key, multiplicity, *(np.zeros(size) for _ in range(4)))

    @property
    def birth_cycles(self) -> np.ndarray:
        return np.arange(self.key.birth_cycle, self.key.birth_cycle + self.n)

    @property
    def ranks(self) -> np.ndarray:
        return np.arange(1, self.n + 1)

    def needle_active(self, cycle: int, lifespan: int) -> np.ndarray:
        return needle_active(self.birth_cycles, cycle, lifespan)

    def wood(self) -> np.ndarray:
        return self.internode[: self.n] + self.ring[: self.n]

    def radius(self, wood_density: float) -> np.ndarray:
        return radius_from_biomass(self.wood(), self.length[: self.n], wood_density)

    def to_dict(self) -> dict:
        n = self.n
        return {
            "pa": self.key.pa,
            "birth_cycle": self.key.birth_cycle,
            "multiplicity": self.multiplicity,
            "n": n,
            "internode": self.internode[:n].tolist(),
            "ring": self.ring[:n].tolist(),
            "length": self.length[:n].tolist(),
            "needle": self.needle[:n].tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, horizon: int) -> "AxisClassState":
        state = cls.empty(AxisClassKey(d["pa"], d["birth_cycle"]), d["multiplicity"], horizon)
        n = state.n = d["n"]
        for name in ("internode", "ring", "length", "needle"):
            getattr(state, name)[:n] = d[name]
        return state


@dataclass
class CycleRecord:
    cycle: int
    q_prev: float
    production: float
    leaf_area: float
    d_org: float
    d_rg: float
    d_total: float
    q_rg: float
    d_pool: float
    d_pressler: float
    organ_alloc: float
    ring_alloc: float


@dataclass
class LedgerEntry:
    """Biomass one class received during one cycle (per single axis)."""

    cycle: int
    pa: int
    birth_cycle: int
    multiplicity: int
    internode: float
    needle: float
    ring: float


@dataclass
class GrowthState:
    params: ModelParameters
    rules: OrganogenesisRules
    counts: StructureCounts
    classes: dict[AxisClassKey, AxisClassState] = field(default_factory=dict)
    cycle: int = 0
    q_prev: float = 0.0
    records: list[CycleRecord] = field(default_factory=list)
    ledger: list[LedgerEntry] = field(default_factory=list)


@dataclass
class SimulationTrace:
    params: ModelParameters
    rules: OrganogenesisRules
    records: list[CycleRecord]
    classes: dict[AxisClassKey, AxisClassState]
    ledger: list[LedgerEntry]

    @property
    def stem(self) -> AxisClassState:
        return self.classes[AxisClassKey(1, 1)]

    def branch_classes(self) -> list[AxisClassState]:
        return [self.classes[k] for k in sorted(self.classes) if k.pa > 1]

    def to_dict(self) -> dict:
        return {
            "config": json.loads(dumps_config(self.params, self.rules)),
            "records": [asdict(r) for r in self.records],
            "classes": [self.classes[k].to_dict() for k in sorted(self.classes)],
            "ledger": [asdict(e) for e in self.ledger],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationTrace":
        params, rules = from_dict(d["config"])
        classes = {}
        for c in d["classes"]:
            state = AxisClassState.from_dict(c, rules.horizon)
            classes[state.key] = state
        return cls(
            params,
            rules,
            [CycleRecord(**r) for r in d["records"]],
            classes,
            [LedgerEntry(**e) for e in d["ledger"]],
        )


# --- simulation -----------------------------------------------------------


def initial_state(params: ModelParameters, rules: OrganogenesisRules) -> GrowthState:
    counts = build_counts(rules, params.needle_lifespan)
    return GrowthState(params, rules, counts, q_prev=params.seed_biomass)


def compute_leaf_area(state: GrowthState, params: ModelParameters, cycle: int) -> float:
    """Active needle area (m²) over all classes, multiplicity-weighted."""
    mass = 0.0
    for cls in state.classes.values():
        on = cls.needle_active(cycle, params.needle_lifespan)
        mass += cls.multiplicity * float(cls.needle[: cls.n][on].sum())
    return mass / params.slw


def step(state: GrowthState) -> GrowthState:
    """Advance ``state`` by one growth cycle, in place."""
    i = state.cycle + 1
    try:
        _step(state, i)
    except SimulationError:
        raise
    except (ValueError, ArithmeticError) as exc:
        raise SimulationError(i, str(exc)) from exc
    state.cycle = i
    return state


def _step(state: GrowthState, i: int) -> None:
    params, rules, counts = state.params, state.rules, state.counts
    if i > rules.horizon:
        raise SimulationError(i, f"beyond horizon {rules.horizon}")

    # organogenesis
    for key in counts.classes_at(i):
        if key not in state.classes:
            state.classes[key] = AxisClassState.empty(key, counts.multiplicity[key], rules.horizon)
        state.classes[key].n = i - key.birth_cycle + 1
    new_per_pa = counts.new_internodes[:, i - 1]

    # demand
    d_org = 0.0
    new_counts: dict[tuple[str, int], int] = {}
    for k in range(1, rules.pa_max + 1):
        n_new = int(new_per_pa[k - 1])
        if n_new:
            d_org += (params.sink_needle[k - 1] + params.sink_internode[k - 1]) * n_new
            new_counts[("needle", k)] = n_new
            new_counts[("internode", k)] = n_new
    q_prev = state.q_prev
    d_rg, d_total = solve_ring_demand(d_org, q_prev, params.ring_sink_const, params.ring_sink_slope)
    if d_total <= 0.0 and q_prev > 0.0:
        raise SimulationError(i, "positive biomass but zero total demand")

    # new organs
    incr = allocate_new_organs(new_counts, params, q_prev, d_total)
    organ_alloc = sum(incr[key] * n for key, n in new_counts.items())
    q_rg = q_prev * d_rg / d_total if d_total > 0.0 else 0.0
    for cls in state.classes.values():
        k = cls.key.pa
        last = cls.n - 1
        q_e = incr[("internode", k)]
        cls.internode[last] = q_e
        cls.needle[last] = incr[("needle", k)]
        cls.length[last] = apply_allometry(q_e, params.allometry_b[k - 1], params.allometry_beta[k - 1])

    # rings
    weight_fn = None
    if params.foliage_mass_weighted:
        weight_fn = lambda key: state.classes[key].needle[: state.classes[key].n]  # noqa: E731
    foliage = leaves_above(
        rules,
        i,
        params.needle_lifespan,
        params.foliage_includes_own,
        needle_weight=weight_fn,
        counts=counts,
    )
    keys = sorted(state.classes)
    sizes = [state.classes[k].n for k in keys]
    weights = np.concatenate(
        [params.ring_density[k.pa - 1] * state.classes[k].length[: n] for k, n in zip(keys, sizes)]
    )
    mult = np.repeat([float(state.classes[k].multiplicity) for k in keys], sizes)
    fol = np.concatenate([foliage[k] for k in keys])
    rings, d_pool, d_pressler = allocate_rings(weights, fol, mult, params.lambda_pressler, q_rg)
    ring_alloc = float(np.dot(mult, rings))

    offset = 0
    for key, n in zip(keys, sizes):
        cls = state.classes[key]
        chunk = rings[offset : offset + n]
        cls.ring[:n] += chunk
        offset += n
        state.ledger.append(
            LedgerEntry(
                i,
                key.pa,
                key.birth_cycle,
                cls.multiplicity,
                float(cls.internode[n - 1]),
                float(cls.needle[n - 1]),
                float(chunk.sum()),
            )
        )

    # production
    leaf_area = compute_leaf_area(state, params, i)
    q = compute_production(leaf_area, params, i)
    state.records.append(
        CycleRecord(
            i, q_prev, q, leaf_area, d_org, d_rg, d_total, q_rg, d_pool, d_pressler, organ_alloc, ring_alloc
        )
    )
    state.q_prev = q


def simulate(params: ModelParameters, rules: OrganogenesisRules) -> SimulationTrace:
    """Run all ``rules.horizon`` cycles from the seed.

    Raises:
        ConfigError: the parameters or rules are invalid.
        SimulationError: a cycle failed, with the cycle number attached.
    """
    errors = validate(params, rules)
    if errors:
        raise ConfigError(errors)
    state = initial_state(params, rules)
    for _ in range(rules.horizon):
        step(state)
    return SimulationTrace(params, rules, state.records, state.classes, state.ledger)


# --- export ---------------------------------------------------------------

CYCLE_FIELDS = [f for f in CycleRecord.__dataclass_fields__]
METAMER_FIELDS = [
    "pa",
    "birth_cycle",
    "rank",
    "multiplicity",
    "metamer_birth",
    "internode",
    "ring",
    "wood",
    "length",
    "radius",
    "needle",
]


def cycles_csv(trace: SimulationTrace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CYCLE_FIELDS)
    for rec in trace.records:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in asdict(rec).values()])
    return buf.getvalue()


def metamers_csv(trace: SimulationTrace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METAMER_FIELDS)
    rho = trace.params.wood_density
    for key in sorted(trace.classes):
        cls = trace.classes[key]
        radius = cls.radius(rho)
        wood = cls.wood()
        for j in range(cls.n):
            writer.writerow(
                [
                    key.pa,
                    key.birth_cycle,
                    j + 1,
                    cls.multiplicity,
                    key.birth_cycle + j,
                    repr(float(cls.internode[j])),
                    repr(float(cls.ring[j])),
                    repr(float(wood[j])),
                    repr(float(cls.length[j])),
                    repr(float(radius[j])),
                    repr(float(cls.needle[j])),
                ]
            )
    return buf.getvalue()


def summary(trace: SimulationTrace) -> dict:
    classes = [trace.classes[k] for k in sorted(trace.classes)]
    total_wood = sum(c.multiplicity * float(c.wood().sum()) for c in classes)
    total_needle = sum(c.multiplicity * float(c.needle[: c.n].sum()) for c in classes)
    stem = trace.stem
    return {
        "horizon": trace.rules.horizon,
        "pa_max": trace.rules.pa_max,
        "axis_classes": len(trace.classes),
        "metamers": int(trace_counts_total(trace)),
        "total_production": float(sum(r.production for r in trace.records)),
        "final_leaf_area": trace.records[-1].leaf_area,
        "total_wood": total_wood,
        "total_needle": total_needle,
        "stem_height_cm": float(stem.length[: stem.n].sum()),
    }


def trace_counts_total(trace: SimulationTrace) -> int:
    return sum(c.multiplicity * c.n for c in trace.classes.values())


def trace_files(trace: SimulationTrace) -> dict[str, str]:
    """File name to content for a trace export directory."""
    return {
        "cycles.csv": cycles_csv(trace),
        "metamers.csv": metamers_csv(trace),
        "trace.json": json.dumps(trace.to_dict(), indent=1),
        "summary.json": json.dumps(summary(trace), indent=2),
    }


def load_trace(directory: str | Path) -> SimulationTrace:
    path = Path(directory)
    if path.is_dir():
        path = path / "trace.json"
    return SimulationTrace.from_dict(json.loads(path.read_text()))
