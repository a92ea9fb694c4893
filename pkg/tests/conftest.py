"""Shared helpers and hypothesis strategies."""

from __future__ import annotations

import sys
from dataclasses import replace

import hypothesis.strategies as st
from hypothesis import HealthCheck, settings

from fstm.config import ModelParameters, OrganogenesisRules

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def make_params(pa_max: int = 3, **overrides) -> ModelParameters:
    """Small, valid parameter set covering ``pa_max`` physiological ages."""
    base = ModelParameters(
        r=1.79,
        k_beer=0.5,
        s_p=3.04,
        sink_needle=tuple([1.0, 0.25, 0.03, 0.01][:pa_max]) + (0.01,) * max(0, pa_max - 4),
        sink_internode=tuple([1.5, 0.25, 0.03, 0.01][:pa_max]) + (0.01,) * max(0, pa_max - 4),
        ring_sink_const=10.0,
        ring_sink_slope=0.54,
        lambda_pressler=0.3,
        ring_density=tuple([1.0, 0.89, 0.6, 0.5][:pa_max]) + (0.5,) * max(0, pa_max - 4),
        allometry_b=tuple([3.0, 2.0, 1.5, 1.2][:pa_max]) + (1.2,) * max(0, pa_max - 4),
        allometry_beta=tuple([0.5, 0.45, 0.4, 0.35][:pa_max]) + (0.35,) * max(0, pa_max - 4),
        slw=60.0,
        wood_density=0.9,
        env=1200.0,
        seed_biomass=5.0,
    )
    return replace(base, **overrides)


@st.composite
def rule_sets(draw, max_pa: int = 3, max_horizon: int = 8, max_branches: int = 3):
    pa_max = draw(st.integers(1, max_pa))
    branches = tuple(draw(st.integers(0, max_branches)) for _ in range(pa_max - 1))
    horizon = draw(st.integers(1, max_horizon))
    return OrganogenesisRules(pa_max, branches, horizon)


@st.composite
def parameter_sets(draw, pa_max: int):
    """Random valid parameters; PA-1 sinks and density stay at 1 (normalized form)."""
    pos = lambda lo, hi: st.floats(lo, hi, allow_nan=False, allow_infinity=False)  # noqa: E731

    def per_pa(lo, hi, first=None):
        vals = [draw(pos(lo, hi)) for _ in range(pa_max)]
        if first is not None:
            vals[0] = first
        return tuple(vals)

    return ModelParameters(
        r=draw(pos(0.5, 10.0)),
        k_beer=draw(pos(0.2, 1.0)),
        s_p=draw(pos(1.0, 100.0)),
        sink_needle=per_pa(0.01, 2.0, first=1.0),
        sink_internode=per_pa(0.01, 2.0),
        ring_sink_const=draw(pos(0.0, 20.0)),
        ring_sink_slope=draw(pos(0.0, 1.0)),
        lambda_pressler=draw(pos(0.0, 1.0)),
        ring_density=per_pa(0.1, 2.0, first=1.0),
        allometry_b=per_pa(0.5, 5.0),
        allometry_beta=per_pa(0.1, 0.8),
        slw=draw(pos(10.0, 200.0)),
        wood_density=draw(pos(0.3, 1.2)),
        env=draw(pos(10.0, 3000.0)),
        needle_lifespan=draw(st.integers(1, 3)),
        seed_biomass=draw(pos(0.5, 10.0)),
        foliage_includes_own=draw(st.booleans()),
    )


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
