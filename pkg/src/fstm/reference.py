"""Per-metamer reference simulation on the explicit tree.

Every metamer is simulated on its own, without grouping identical axes.
It is far slower than :func:`fstm.engine.simulate` and exists to check the
factorized engine and to benchmark it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError, ModelParameters, OrganogenesisRules, validate
from .engine import (
    allocate_rings,
    apply_allometry,
    compute_production,
    radius_from_biomass,
    solve_ring_demand,
)
from .structure import ExplicitTree, expand_explicit, explicit_leaves_above, needle_active


@dataclass
class ExplicitResult:
    tree: ExplicitTree
    internode: np.ndarray
    needle: np.ndarray
    ring: np.ndarray
    length: np.ndarray
    production: np.ndarray
    q_rg: np.ndarray

    def radius(self, wood_density: float) -> np.ndarray:
        return radius_from_biomass(self.internode + self.ring, self.length, wood_density)


def simulate_explicit(
    params: ModelParameters, rules: OrganogenesisRules, tree: ExplicitTree | None = None
) -> ExplicitResult:
    """Simulate every metamer of ``tree`` (expanded from ``rules`` if omitted).

    Raises:
        ConfigError: the parameters or rules are invalid.
        ExpansionTooLarge: the tree exceeds the node cap.
    """
    errors = validate(params, rules)
    if errors:
        raise ConfigError(errors)
    if tree is None:
        tree = expand_explicit(rules)
    n = len(tree)
    internode = np.zeros(n)
    needle = np.zeros(n)
    ring = np.zeros(n)
    length = np.zeros(n)
    production = np.zeros(rules.horizon)
    q_rgs = np.zeros(rules.horizon)
    pa_idx = tree.pa - 1
    sink_a = np.asarray(params.sink_needle)[pa_idx]
    sink_e = np.asarray(params.sink_internode)[pa_idx]
    p_rg = np.asarray(params.ring_density)[pa_idx]
    b = np.asarray(params.allometry_b)[pa_idx]
    beta = np.asarray(params.allometry_beta)[pa_idx]
    ones = np.ones(n)

    q_prev = params.seed_biomass
    for i in range(1, rules.horizon + 1):
        new = tree.birth == i
        living = tree.birth <= i
        d_org = float(sink_a[new].sum() + sink_e[new].sum())
        d_rg, d_total = solve_ring_demand(
            d_org, q_prev, params.ring_sink_const, params.ring_sink_slope
        )
        ratio = q_prev / d_total
        internode[new] = sink_e[new] * ratio
        needle[new] = sink_a[new] * ratio
        for node in np.flatnonzero(new):
            length[node] = apply_allometry(internode[node], b[node], beta[node])

        q_rg = q_prev * d_rg / d_total
        weight = needle if params.foliage_mass_weighted else None
        fol = explicit_leaves_above(
            tree, i, params.needle_lifespan, params.foliage_includes_own, needle_weight=weight
        )
        idx = np.flatnonzero(living)
        inc, _, _ = allocate_rings(
            p_rg[idx] * length[idx], fol[idx], ones[idx], params.lambda_pressler, q_rg
        )
        ring[idx] += inc

        on = needle_active(tree.birth, i, params.needle_lifespan)
        leaf_area = float(needle[on].sum()) / params.slw
        q_prev = compute_production(leaf_area, params, i)
        production[i - 1] = q_prev
        q_rgs[i - 1] = q_rg
    return ExplicitResult(tree, internode, needle, ring, length, production, q_rgs)


def max_relative_deviation(result: ExplicitResult, trace) -> dict[str, float]:
    """Largest relative gap, per quantity, between each metamer and its factorized class.

    ``trace`` is a :class:`fstm.engine.SimulationTrace` of the same parameters
    and rules. Gaps are relative to the larger magnitude, with zero where
    both values are zero.
    """
    tree = result.tree
    axis_pa = np.asarray(tree.axis_pa)[tree.axis]
    axis_birth = np.asarray(tree.axis_birth)[tree.axis]
    fields = ("internode", "needle", "ring", "length")
    factorized = {f: np.empty(len(tree)) for f in fields}
    for key, cls in trace.classes.items():
        nodes = np.flatnonzero((axis_pa == key.pa) & (axis_birth == key.birth_cycle))
        ranks = tree.rank[nodes] - 1
        for f in fields:
            factorized[f][nodes] = getattr(cls, f)[ranks]

    def gap(a, b):
        scale = np.maximum(np.abs(a), np.abs(b))
        diff = np.abs(a - b)
        return float(np.max(np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), 0.0), initial=0.0))

    out = {f: gap(getattr(result, f), factorized[f]) for f in fields}
    out["production"] = gap(result.production, np.array([r.production for r in trace.records]))
    return out
