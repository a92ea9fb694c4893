"""Observation vectors for the two tree-description patterns, target files, allometry fits.

Pattern 1 (organ level): every stem internode, plus every metamer of one
representative axis per branch class. Pattern 2 (compartment level): every
stem internode with its radius, plus crown-wide branch wood and needle
totals (or per-whorl totals on request).

Row order is deterministic: stem base to top, then branch classes by PA and
birth cycle, then crown aggregates.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .compartment import CompartmentTrace
from .engine import SimulationTrace
from .structure import AxisClassKey

log = logging.getLogger(__name__)

HEADER = ["pattern", "kind", "pa", "birth_cycle", "rank", "value", "unit", "weight"]

UNITS = {
    "stem_len": "cm",
    "stem_radius": "cm",
    "stem_wood": "g",
    "stem_needle": "g",
    "branch_len": "cm",
    "branch_wood": "g",
    "branch_needle": "g",
    "crown_branch_wood": "g",
    "crown_branch_needle": "g",
}
PATTERN_KINDS = {
    1: ("stem_len", "stem_wood", "stem_needle", "branch_len", "branch_wood", "branch_needle"),
    2: ("stem_len", "stem_radius", "stem_wood", "stem_needle", "crown_branch_wood", "crown_branch_needle"),
}


class TargetFileError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class Observation:
    """One observable. Crown aggregates use ``pa = birth_cycle = 0``; their
    ``rank`` is 0 for the whole crown or the bearing stem rank per whorl."""

    kind: str
    pa: int
    birth_cycle: int
    rank: int
    value: float
    weight: float = 1.0

    @property
    def key(self) -> tuple[str, int, int, int]:
        return (self.kind, self.pa, self.birth_cycle, self.rank)

    @property
    def unit(self) -> str:
        return UNITS[self.kind]


@dataclass(frozen=True)
class PatternVector:
    pattern: int
    rows: tuple[Observation, ...]

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.rows])

    @property
    def keys(self) -> list[tuple[str, int, int, int]]:
        return [r.key for r in self.rows]


# datasets read from disk and vectors extracted from traces share one layout
TargetDataset = PatternVector

AnyTrace = Union[SimulationTrace, CompartmentTrace]


def extract_pattern1(trace: SimulationTrace) -> PatternVector:
    rows: list[Observation] = []
    for key in sorted(trace.classes):
        cls = trace.classes[key]
        prefix = "stem" if key.pa == 1 else "branch"
        wood = cls.wood()
        for j in range(cls.n):
            for kind, value in (
                (f"{prefix}_len", cls.length[j]),
                (f"{prefix}_wood", wood[j]),
                (f"{prefix}_needle", cls.needle[j]),
            ):
                rows.append(Observation(kind, key.pa, key.birth_cycle, j + 1, float(value)))
    return PatternVector(1, tuple(rows))


def _whorl_totals(trace: SimulationTrace) -> tuple[np.ndarray, np.ndarray]:
    """Wood and needle mass of everything borne by each stem metamer."""
    rules = trace.rules
    system: dict[AxisClassKey, tuple[float, float]] = {}
    for key in sorted(trace.classes, key=lambda kk: (-kk.pa, kk.birth_cycle)):
        cls = trace.classes[key]
        wood = float(cls.wood().sum())
        needle = float(cls.needle[: cls.n].sum())
        nb = rules.n_b(key.pa)
        for rho in range(1, cls.n + 1):
            sub = system.get(AxisClassKey(key.pa + 1, key.birth_cycle + rho))
            if sub:
                wood += nb * sub[0]
                needle += nb * sub[1]
        system[key] = (wood, needle)
    n = trace.stem.n
    wood = np.zeros(n)
    needle = np.zeros(n)
    nb = rules.n_b(1)
    for rho in range(1, n + 1):
        sub = system.get(AxisClassKey(2, 1 + rho))
        if sub:
            wood[rho - 1] = nb * sub[0]
            needle[rho - 1] = nb * sub[1]
    return wood, needle


def extract_pattern2(trace: AnyTrace, per_whorl: bool = False) -> PatternVector:
    if isinstance(trace, CompartmentTrace):
        if per_whorl:
            raise ValueError("per-whorl totals need a full simulation trace")
        length, wood = trace.stem_length, trace.stem_wood
        radius, needle = trace.stem_radius, trace.stem_needle
        crown = [(0, trace.crown_wood, trace.crown_needle)]
    else:
        stem = trace.stem
        n = stem.n
        length, wood, needle = stem.length[:n], stem.wood(), stem.needle[:n]
        radius = stem.radius(trace.params.wood_density)
        if per_whorl:
            w, a = _whorl_totals(trace)
            crown = [(j + 1, w[j], a[j]) for j in range(n)]
        else:
            branches = trace.branch_classes()
            crown = [
                (
                    0,
                    sum(c.multiplicity * float(c.wood().sum()) for c in branches),
                    sum(c.multiplicity * float(c.needle[: c.n].sum()) for c in branches),
                )
            ]
    rows: list[Observation] = []
    for j in range(len(length)):
        for kind, value in (
            ("stem_len", length[j]),
            ("stem_radius", radius[j]),
            ("stem_wood", wood[j]),
            ("stem_needle", needle[j]),
        ):
            rows.append(Observation(kind, 1, 1, j + 1, float(value)))
    for rank, w_total, a_total in crown:
        rows.append(Observation("crown_branch_wood", 0, 0, rank, float(w_total)))
        rows.append(Observation("crown_branch_needle", 0, 0, rank, float(a_total)))
    return PatternVector(2, tuple(rows))


def extract_pattern(trace: AnyTrace, pattern: int, per_whorl: bool = False) -> PatternVector:
    if pattern == 1:
        return extract_pattern1(trace)
    if pattern == 2:
        return extract_pattern2(trace, per_whorl)
    raise ValueError(f"unknown pattern {pattern}")


# --- target files ---------------------------------------------------------


def _check_row(pattern: int, obs: Observation, unit: str) -> list[str]:
    errors = []
    if obs.kind not in UNITS:
        return [f"unknown observable kind {obs.kind!r}"]
    if obs.kind not in PATTERN_KINDS[pattern]:
        errors.append(f"kind {obs.kind!r} not allowed in pattern {pattern}")
    if unit != UNITS[obs.kind]:
        errors.append(f"unit {unit!r} does not match {obs.kind} (expected {UNITS[obs.kind]})")
    if not obs.value >= 0:
        errors.append(f"negative value {obs.value}")
    if not obs.weight >= 0:
        errors.append(f"negative weight {obs.weight}")
    if obs.kind.startswith("crown"):
        if obs.pa != 0 or obs.birth_cycle != 0 or obs.rank < 0:
            errors.append("crown rows need pa=0, birth_cycle=0, rank>=0")
    elif obs.kind.startswith("stem"):
        if obs.pa != 1 or obs.birth_cycle != 1 or obs.rank < 1:
            errors.append("stem rows need pa=1, birth_cycle=1, rank>=1")
    elif obs.pa < 2 or obs.birth_cycle < obs.pa or obs.rank < 1:
        errors.append("branch rows need pa>=2, birth_cycle>=pa, rank>=1")
    return errors


def parse_targets(text: str, source: str = "<string>") -> TargetDataset:
    """Parse target CSV text; every bad row is reported with its line number."""
    reader = csv.reader(io.StringIO(text))
    lines = [(n, row) for n, row in enumerate(reader, start=1) if any(c.strip() for c in row)]
    if not lines:
        log.warning("%s: empty target file", source)
        return PatternVector(0, ())
    n0, header = lines[0]
    if [h.strip() for h in header] != HEADER:
        raise TargetFileError([f"{source}:{n0}: header must be {','.join(HEADER)}"])
    errors: list[str] = []
    rows: list[Observation] = []
    patterns: set[int] = set()
    for n, row in lines[1:]:
        if len(row) != len(HEADER):
            errors.append(f"{source}:{n}: expected {len(HEADER)} columns, got {len(row)}")
            continue
        pattern_s, kind, pa, birth, rank, value, unit, weight = (c.strip() for c in row)
        try:
            pattern = int(pattern_s)
            obs = Observation(
                kind, int(pa), int(birth), int(rank), float(value), float(weight) if weight else 1.0
            )
        except ValueError as exc:
            errors.append(f"{source}:{n}: {exc}")
            continue
        if pattern not in PATTERN_KINDS:
            errors.append(f"{source}:{n}: unknown pattern {pattern}")
            continue
        if not (math.isfinite(obs.value) and math.isfinite(obs.weight)):
            errors.append(f"{source}:{n}: non-finite number")
            continue
        patterns.add(pattern)
        errors.extend(f"{source}:{n}: {msg}" for msg in _check_row(pattern, obs, unit))
        rows.append(obs)
    if len(patterns) > 1:
        errors.append(f"{source}: rows mix patterns {sorted(patterns)}")
    seen: set = set()
    for obs in rows:
        if obs.key in seen:
            errors.append(f"{source}: duplicate row {obs.key}")
        seen.add(obs.key)
    if errors:
        raise TargetFileError(errors)
    if not rows:
        log.warning("%s: target file has a header but no rows", source)
        return PatternVector(0, ())
    return PatternVector(patterns.pop(), tuple(rows))


def parse_target_file(path: str | Path) -> TargetDataset:
    path = Path(path)
    return parse_targets(path.read_text(), str(path))


def format_targets(dataset: TargetDataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for obs in dataset.rows:
        writer.writerow(
            [
                dataset.pattern,
                obs.kind,
                obs.pa,
                obs.birth_cycle,
                obs.rank,
                repr(obs.value),
                obs.unit,
                repr(obs.weight),
            ]
        )
    return buf.getvalue()


def write_target_file(dataset: TargetDataset, path: str | Path) -> None:
    Path(path).write_text(format_targets(dataset))


def with_noise(vector: PatternVector, sigma: float, rng: np.random.Generator) -> PatternVector:
    """Multiply every value by an independent lognormal factor ``exp(sigma * z)``."""
    if sigma == 0:
        return vector
    factors = np.exp(sigma * rng.standard_normal(len(vector)))
    return PatternVector(
        vector.pattern,
        tuple(replace(r, value=float(r.value * f)) for r, f in zip(vector.rows, factors)),
    )


# --- allometry -------------------------------------------------------------


@dataclass(frozen=True)
class AllometryFit:
    b: float
    beta: float
    r_squared: float
    n: int


def fit_allometry(records: Iterable[tuple[float, float]]) -> AllometryFit:
    """Fit ``length = b * q**beta`` by least squares on the log-log scale.

    Raises:
        DegenerateInputError: fewer than 3 records, a non-positive value, or
            no spread in ``log(q)``.
    """
    data = np.asarray(list(records), dtype=float)
    if data.ndim != 2 or data.shape[0] < 3:
        raise DegenerateInputError("need at least 3 (biomass, length) records")
    q, length = data[:, 0], data[:, 1]
    if np.any(q <= 0) or np.any(length <= 0):
        raise DegenerateInputError("biomass and length must be strictly positive")
    x, y = np.log(q), np.log(length)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx <= 1e-300 * len(x):
        raise DegenerateInputError("no variance in log(biomass)")
    beta = float(xc @ (y - y.mean())) / sxx
    intercept = float(y.mean() - beta * x.mean())
    resid = y - (intercept + beta * x)
    yc = y - y.mean()
    syy = float(yc @ yc)
    ss_res = float(resid @ resid)
    r2 = 1.0 - ss_res / syy if syy > 0 else 0.0
    return AllometryFit(math.exp(intercept), beta, r2, len(x))


def allometry_records(trace: SimulationTrace, pa: int | None = None) -> list[tuple[float, float]]:
    """(primary biomass, length) of every simulated internode class."""
    out = []
    for key in sorted(trace.classes):
        if pa is not None and key.pa != pa:
            continue
        cls = trace.classes[key]
        out.extend(zip(cls.internode[: cls.n].tolist(), cls.length[: cls.n].tolist()))
    return out
