"""Compartment-level simulation: stem metamers plus whole-crown totals.

Every internode of PA k created at cycle j receives the same biomass, so its
length depends only on ``(k, j)``. When foliage is counted by needle cohort
(not by mass), the foliage above every position is purely structural. The
ring pool and the foliage-weighted demand then reduce to sums over
``(k, j)`` with precomputed structural weights, and the whole run costs
O(pa_max * horizon**2) arithmetic instead of touching every axis class each
cycle.

The outputs equal those of :func:`fstm.engine.simulate` followed by
compartment extraction, up to floating-point rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .config import ModelParameters, OrganogenesisRules
from .engine import SimulationError, apply_allometry, compute_production, radius_from_biomass, solve_ring_demand
from .structure import AxisClassKey, build_counts, leaves_above


@dataclass(frozen=True)
class StructuralWeights:
    """Parameter-independent sums over the factorized tree.

    ``new[k-1, j-1]``: internodes of PA k created at cycle j (all copies).
    ``foliage[k-1, j-1, i-1]``: over those internodes, total foliage above
    at cycle i. ``stem_foliage[j-1, i-1]``: foliage above the stem metamer
    born at j, at cycle i.
    """

    new: np.ndarray
    foliage: np.ndarray
    stem_foliage: np.ndarray
    active: np.ndarray  # active[j-1, i-1]: needle cohort born at j is active at i


@lru_cache(maxsize=32)
def structural_weights(
    rules: OrganogenesisRules, lifespan: int, include_own: bool
) -> StructuralWeights:
    counts = build_counts(rules, lifespan)
    n, pa_max = rules.horizon, rules.pa_max
    foliage = np.zeros((pa_max, n, n))
    stem = np.zeros((n, n))
    for i in range(1, n + 1):
        above = leaves_above(rules, i, lifespan, include_own, counts=counts)
        for key, values in above.items():
            m = counts.multiplicity[key]
            j0 = key.birth_cycle - 1
            foliage[key.pa - 1, j0 : j0 + len(values), i - 1] += m * values
        stem[:i, i - 1] = above[AxisClassKey(1, 1)]
    births = np.arange(1, n + 1)
    age = births[None, :] - births[:, None]
    active = (age >= 0) & (age < lifespan)
    for arr in (foliage, stem, active):
        arr.setflags(write=False)
    new = counts.new_internodes.astype(float)
    new.setflags(write=False)
    return StructuralWeights(new, foliage, stem, active)


@dataclass
class CompartmentTrace:
    params: ModelParameters
    rules: OrganogenesisRules
    stem_internode: np.ndarray
    stem_ring: np.ndarray
    stem_length: np.ndarray
    stem_needle: np.ndarray
    crown_wood: float
    crown_needle: float
    production: np.ndarray

    @property
    def stem_wood(self) -> np.ndarray:
        return self.stem_internode + self.stem_ring

    @property
    def stem_radius(self) -> np.ndarray:
        return radius_from_biomass(self.stem_wood, self.stem_length, self.params.wood_density)


def simulate_compartments(params: ModelParameters, rules: OrganogenesisRules) -> CompartmentTrace:
    """Run the model keeping only stem metamers and crown totals.

    Raises:
        ValueError: for mass-weighted foliage, whose foliage sums are not
            structural.
    """
    if params.foliage_mass_weighted:
        raise ValueError("compartment simulation needs count-based foliage")
    w = structural_weights(rules, params.needle_lifespan, params.foliage_includes_own)
    n, pa_max = rules.horizon, rules.pa_max
    sink_a = np.asarray(params.sink_needle[:pa_max])
    sink_e = np.asarray(params.sink_internode[:pa_max])
    p_rg = np.asarray(params.ring_density[:pa_max])
    b = np.asarray(params.allometry_b[:pa_max])
    beta = np.asarray(params.allometry_beta[:pa_max])
    lam = params.lambda_pressler

    q_e = np.zeros((pa_max, n))  # per-internode primary biomass by (PA, birth)
    q_a = np.zeros((pa_max, n))
    length = np.zeros((pa_max, n))
    ring_by_pa = np.zeros(pa_max)
    stem_ring = np.zeros(n)
    production = np.zeros(n)

    q_prev = params.seed_biomass
    for i in range(1, n + 1):
        col = i - 1
        new = w.new[:, col]
        d_org = float(np.dot(sink_a + sink_e, new))
        d_rg, d_total = solve_ring_demand(d_org, q_prev, params.ring_sink_const, params.ring_sink_slope)
        ratio = q_prev / d_total
        q_e[:, col] = np.where(new > 0, sink_e * ratio, 0.0)
        q_a[:, col] = np.where(new > 0, sink_a * ratio, 0.0)
        for k in range(pa_max):
            length[k, col] = apply_allometry(q_e[k, col], b[k], beta[k])
        q_rg = q_prev * d_rg / d_total

        if q_rg > 0.0:
            lw = p_rg[:, None] * length[:, :i]
            pool_pa = (w.new[:, :i] * lw).sum(axis=1)
            press_pa = (w.foliage[:, :i, col] * lw).sum(axis=1)
            d_pool = float(pool_pa.sum())
            d_pressler = float(press_pa.sum())
            if d_pool <= 0.0:
                raise SimulationError(i, "ring biomass to allocate but no internode has ring sink")
            if lam > 0.0 and d_pressler > 0.0:
                c_pool, c_press = (1.0 - lam) / d_pool, lam / d_pressler
            else:
                c_pool, c_press = 1.0 / d_pool, 0.0
            ring_by_pa += (c_pool * pool_pa + c_press * press_pa) * q_rg
            stem_ring[:i] += (c_pool + c_press * w.stem_foliage[:i, col]) * lw[0] * q_rg

        on = w.active[:i, col]
        leaf_mass = float((w.new[:, :i][:, on] * q_a[:, :i][:, on]).sum())
        q_prev = compute_production(leaf_mass / params.slw, params, i)
        production[col] = q_prev

    crown_wood = float((w.new[1:] * q_e[1:]).sum() + ring_by_pa[1:].sum())
    crown_needle = float((w.new[1:] * q_a[1:]).sum())
    return CompartmentTrace(
        params,
        rules,
        q_e[0].copy(),
        stem_ring,
        length[0].copy(),
        q_a[0].copy(),
        crown_wood,
        crown_needle,
        production,
    )
