"""Model parameters, organogenesis rules, and their JSON configuration format.

A configuration file holds two top-level objects, ``"parameters"`` and
``"rules"``. Keys are the dataclass field names below; per-physiological-age
(PA) fields are arrays indexed from PA 1.

Sinks are relative quantities. After loading, parameters are normalized so
that the PA-1 needle sink and the PA-1 ring density both equal 1. The
normalization rescales the ring sink constant and slope so that every
simulated biomass is unchanged.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any

PER_PA_FIELDS = (
    "sink_needle",
    "sink_internode",
    "ring_density",
    "allometry_b",
    "allometry_beta",
)


class ConfigError(ValueError):
    """Raised when a configuration is malformed or violates a bound.

    ``errors`` lists every problem found, not just the first one.
    """

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class ModelParameters:
    r: float
    k_beer: float
    s_p: float
    sink_needle: tuple[float, ...]
    sink_internode: tuple[float, ...]
    ring_sink_const: float
    ring_sink_slope: float
    lambda_pressler: float
    ring_density: tuple[float, ...]
    allometry_b: tuple[float, ...]
    allometry_beta: tuple[float, ...]
    slw: float
    wood_density: float
    env: tuple[float, ...] | float = 1.0
    needle_lifespan: int = 2
    seed_biomass: float = 1.0
    # a ring at an internode's base also supports the needles of that metamer
    foliage_includes_own: bool = True
    # count needle organs above a position, or weight them by needle mass
    foliage_mass_weighted: bool = False

    def env_at(self, cycle: int) -> float:
        """Environmental factor E for growth cycle ``cycle`` (1-based)."""
        if isinstance(self.env, (int, float)):
            return float(self.env)
        return float(self.env[cycle - 1])

    def per_pa(self, name: str, pa: int) -> float:
        return getattr(self, name)[pa - 1]


@dataclass(frozen=True)
class OrganogenesisRules:
    """Deterministic branching rules.

    ``branches_per_cycle[k-1]`` lateral axes of PA k+1 are borne by every new
    metamer of PA k. Entries at index ``pa_max - 1`` and beyond are ignored.
    """

    pa_max: int
    branches_per_cycle: tuple[int, ...]
    horizon: int

    def n_b(self, pa: int) -> int:
        if pa >= self.pa_max or pa - 1 >= len(self.branches_per_cycle):
            return 0
        return self.branches_per_cycle[pa - 1]


_PARAM_REQUIRED = (
    "r",
    "k_beer",
    "s_p",
    "sink_needle",
    "sink_internode",
    "ring_sink_const",
    "ring_sink_slope",
    "lambda_pressler",
    "ring_density",
    "allometry_b",
    "allometry_beta",
    "slw",
    "wood_density",
)
_PARAM_DEFAULTS = {
    "env": 1.0,
    "needle_lifespan": 2,
    "seed_biomass": 1.0,
    "foliage_includes_own": True,
    "foliage_mass_weighted": False,
}
_RULE_FIELDS = ("pa_max", "branches_per_cycle", "horizon")


def _is_number(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _is_int(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _coerce_parameters(raw: dict, errors: list[str]) -> dict:
    out: dict[str, Any] = {}
    known = set(_PARAM_REQUIRED) | set(_PARAM_DEFAULTS)
    for key in raw:
        if key not in known:
            errors.append(f"parameters.{key}: unknown field")
    for name in _PARAM_REQUIRED:
        if name not in raw:
            errors.append(f"parameters.{name}: missing required field")
            continue
        value = raw[name]
        if name in PER_PA_FIELDS:
            if not isinstance(value, list) or not all(_is_number(v) for v in value):
                errors.append(f"parameters.{name}: expected an array of numbers")
                continue
            out[name] = tuple(float(v) for v in value)
        else:
            if not _is_number(value):
                errors.append(f"parameters.{name}: expected a number")
                continue
            out[name] = float(value)
    for name, default in _PARAM_DEFAULTS.items():
        value = raw.get(name, default)
        if name == "env":
            if _is_number(value):
                out[name] = float(value)
            elif isinstance(value, list) and all(_is_number(v) for v in value):
                out[name] = tuple(float(v) for v in value)
            else:
                errors.append("parameters.env: expected a number or an array of numbers")
        elif name == "needle_lifespan":
            if not _is_int(value):
                errors.append("parameters.needle_lifespan: expected an integer")
            else:
                out[name] = value
        elif name in ("foliage_includes_own", "foliage_mass_weighted"):
            if not isinstance(value, bool):
                errors.append(f"parameters.{name}: expected a boolean")
            else:
                out[name] = value
        else:
            if not _is_number(value):
                errors.append(f"parameters.{name}: expected a number")
            else:
                out[name] = float(value)
    return out


def _coerce_rules(raw: dict, errors: list[str]) -> dict:
    out: dict[str, Any] = {}
    for key in raw:
        if key not in _RULE_FIELDS:
            errors.append(f"rules.{key}: unknown field")
    for name in ("pa_max", "horizon"):
        if name not in raw:
            errors.append(f"rules.{name}: missing required field")
        elif not _is_int(raw[name]):
            errors.append(f"rules.{name}: expected an integer")
        else:
            out[name] = raw[name]
    value = raw.get("branches_per_cycle")
    if value is None:
        errors.append("rules.branches_per_cycle: missing required field")
    elif not isinstance(value, list) or not all(_is_int(v) for v in value):
        errors.append("rules.branches_per_cycle: expected an array of integers")
    else:
        out["branches_per_cycle"] = tuple(value)
    return out


def validate(params: ModelParameters, rules: OrganogenesisRules) -> list[str]:
    """Check every bound and length constraint.

    Returns:
        A list of error messages, empty when the pair is valid.
    """
    errors: list[str] = []

    if rules.pa_max < 1:
        errors.append("pa_max must be >= 1")
    if rules.horizon < 1:
        errors.append("horizon must be >= 1")
    if any(n < 0 for n in rules.branches_per_cycle):
        errors.append("branches_per_cycle entries must be >= 0")
    if rules.pa_max >= 1 and len(rules.branches_per_cycle) < rules.pa_max - 1:
        errors.append(
            f"branches_per_cycle has {len(rules.branches_per_cycle)} entries; "
            f"PA {len(rules.branches_per_cycle) + 1}..{rules.pa_max - 1} missing"
        )

    for name in ("r", "k_beer", "s_p", "slw", "wood_density", "seed_biomass"):
        value = getattr(params, name)
        if not value > 0:
            errors.append(f"{name} must be > 0")
    for name in ("ring_sink_const", "ring_sink_slope"):
        if not getattr(params, name) >= 0:
            errors.append(f"{name} must be >= 0")
    if not 0.0 <= params.lambda_pressler <= 1.0:
        errors.append("lambda_pressler must be in [0, 1]")
    if params.needle_lifespan < 1:
        errors.append("needle_lifespan must be >= 1")

    for name in PER_PA_FIELDS:
        values = getattr(params, name)
        if len(values) < rules.pa_max:
            errors.append(
                f"{name} has {len(values)} entries; PA {len(values) + 1}..{rules.pa_max} missing"
            )
        if name == "allometry_beta":
            continue
        if name == "allometry_b":
            bad = [i + 1 for i, v in enumerate(values) if not v > 0]
            if bad:
                errors.append(f"{name} must be > 0 (PA {bad})")
        else:
            bad = [i + 1 for i, v in enumerate(values) if not v >= 0]
            if bad:
                errors.append(f"{name} must be >= 0 (PA {bad})")
    if params.sink_needle and not params.sink_needle[0] > 0:
        errors.append("sink_needle at PA 1 must be > 0")
    if params.ring_density and not params.ring_density[0] > 0:
        errors.append("ring_density at PA 1 must be > 0")

    if isinstance(params.env, tuple):
        if len(params.env) < rules.horizon:
            errors.append(
                f"env has {len(params.env)} entries but horizon is {rules.horizon}"
            )
        if any(e < 0 for e in params.env):
            errors.append("env entries must be >= 0")
    elif params.env < 0:
        errors.append("env must be >= 0")
    return errors


def normalize(params: ModelParameters) -> ModelParameters:
    """Rescale sinks so PA-1 needle sink and PA-1 ring density equal 1.

    Dividing every organ sink by ``c`` scales the total demand by ``c`` only
    if the ring demand scales too, which requires ``P_0 / c`` and
    ``P_1 / c**2``. Ring densities enter only through ratios.
    """
    c = params.sink_needle[0]
    d = params.ring_density[0]
    if c == 1.0 and d == 1.0:
        return params
    return replace(
        params,
        sink_needle=tuple(v / c for v in params.sink_needle),
        sink_internode=tuple(v / c for v in params.sink_internode),
        ring_sink_const=params.ring_sink_const / c,
        ring_sink_slope=params.ring_sink_slope / (c * c),
        ring_density=tuple(v / d for v in params.ring_density),
    )


def from_dict(data: dict) -> tuple[ModelParameters, OrganogenesisRules]:
    """Build validated, normalized parameters and rules from a decoded config."""
    errors: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError(["config: expected a JSON object"])
    raw_params = data.get("parameters")
    raw_rules = data.get("rules")
    if not isinstance(raw_params, dict):
        errors.append("parameters: missing or not an object")
    if not isinstance(raw_rules, dict):
        errors.append("rules: missing or not an object")
    if errors:
        raise ConfigError(errors)

    p = _coerce_parameters(raw_params, errors)
    r = _coerce_rules(raw_rules, errors)
    if errors:
        raise ConfigError(errors)

    params = ModelParameters(**p)
    rules = OrganogenesisRules(**r)
    errors = validate(params, rules)
    if errors:
        raise ConfigError(errors)
    return normalize(params), rules


def to_dict(params: ModelParameters, rules: OrganogenesisRules) -> dict:
    p = asdict(params)
    for name in PER_PA_FIELDS:
        p[name] = list(p[name])
    if isinstance(p["env"], tuple):
        p["env"] = list(p["env"])
    r = asdict(rules)
    r["branches_per_cycle"] = list(r["branches_per_cycle"])
    return {"parameters": p, "rules": r}


def load_config(path: str | Path) -> tuple[ModelParameters, OrganogenesisRules]:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON ({exc})"]) from exc
    return from_dict(data)


def dumps_config(params: ModelParameters, rules: OrganogenesisRules) -> str:
    return json.dumps(to_dict(params, rules), indent=2)


def save_config(params: ModelParameters, rules: OrganogenesisRules, path: str | Path) -> None:
    Path(path).write_text(dumps_config(params, rules))


def with_values(params: ModelParameters, values: dict[str, float]) -> ModelParameters:
    """Return a copy of ``params`` with scalar or per-PA entries replaced.

    Keys are field names, or ``"<field>[k]"`` for the PA-k entry of a per-PA
    field. The result is not renormalized.
    """
    updates: dict[str, Any] = {}
    per_pa: dict[str, list[float]] = {}
    for key, value in values.items():
        if "[" in key:
            name, idx = key[:-1].split("[")
            if name not in PER_PA_FIELDS:
                raise KeyError(key)
            arr = per_pa.setdefault(name, list(getattr(params, name)))
            arr[int(idx) - 1] = float(value)
        else:
            if not hasattr(params, key):
                raise KeyError(key)
            updates[key] = float(value)
    for name, arr in per_pa.items():
        updates[name] = tuple(arr)
    return replace(params, **updates)
