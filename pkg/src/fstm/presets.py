"""Two reference trees: fitted values for r, P_1, lambda, p_rg(2) and S_p, plus
placeholder values for everything measured directly on the trees (sinks,
allometry, needle SLW), which were not published.

Placeholders were chosen so that the canopy goes from sparse to saturated
within the horizon and rings take a visible share of the biomass, which
keeps every fitted parameter identifiable from simulated data.
"""

from __future__ import annotations

from dataclasses import replace

from .config import PER_PA_FIELDS, ModelParameters, OrganogenesisRules, from_dict

FITTED = {
    "tree1": {"r": 1.79, "ring_sink_slope": 0.54, "lambda_pressler": 0.01, "ring_density[2]": 0.89, "s_p": 3.04},
    "tree2": {"r": 7.44, "ring_sink_slope": 0.033, "lambda_pressler": 0.40, "ring_density[2]": 0.99, "s_p": 78.0},
}

FREE_NAMES = ["r", "ring_sink_slope", "lambda_pressler", "ring_density[2]", "s_p"]


def _config(name: str, horizon: int, env: float, slw: float) -> dict:
    fit = FITTED[name]
    return {
        "parameters": {
            "r": fit["r"],
            "k_beer": 0.5,
            "s_p": fit["s_p"],
            "env": env,
            "sink_needle": [1.0, 0.25, 0.03],
            "sink_internode": [1.5, 0.25, 0.03],
            "ring_sink_const": 10.0,
            "ring_sink_slope": fit["ring_sink_slope"],
            "lambda_pressler": fit["lambda_pressler"],
            "ring_density": [1.0, fit["ring_density[2]"], 0.6],
            "allometry_b": [3.0, 2.0, 1.5],
            "allometry_beta": [0.5, 0.45, 0.4],
            "slw": slw,
            "needle_lifespan": 2,
            "wood_density": 0.9,
            "seed_biomass": 5.0,
        },
        "rules": {"pa_max": 3, "branches_per_cycle": [3, 1], "horizon": horizon},
    }


def tree1_config() -> dict:
    """18-cycle tree."""
    return _config("tree1", 18, env=1200.0, slw=60.0)


def tree2_config() -> dict:
    """31-cycle tree."""
    return _config("tree2", 31, env=3000.0, slw=40.0)


def load_preset(name: str) -> tuple[ModelParameters, OrganogenesisRules]:
    builders = {"tree1": tree1_config, "tree2": tree2_config}
    return from_dict(builders[name]())


def extend_to_pa(params: ModelParameters, pa_max: int) -> ModelParameters:
    """Pad every per-PA field to ``pa_max`` entries by repeating its last value."""
    padded = {}
    for name in PER_PA_FIELDS:
        values = getattr(params, name)
        padded[name] = tuple(values) + (values[-1],) * max(0, pa_max - len(values))
    return replace(params, **padded)
