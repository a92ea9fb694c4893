"""Tree topology: factorized axis classes and the explicit (per-metamer) tree.

All axes of the same physiological age (PA) that start growing at the same
growth cycle are identical, so the factorized form keeps one record per
``(pa, birth_cycle)`` class together with its multiplicity. The explicit tree
materializes every metamer and is kept as a reference for testing and
benchmarking.

Timing conventions:

* the stem (PA 1) starts at cycle 1;
* every living axis adds one metamer per cycle;
* a metamer of PA k created at cycle i bears ``n_b(k)`` lateral axes of PA
  k+1 that start growing at cycle i+1;
* a needle cohort born at cycle j is active at cycle i while ``i - j < lifespan``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .config import OrganogenesisRules

DEFAULT_NODE_CAP = 10_000_000


class AxisClassKey(NamedTuple):
    pa: int
    birth_cycle: int


class ExpansionTooLarge(RuntimeError):
    """The explicit tree would exceed the node cap."""

    def __init__(self, projected: int, cap: int):
        self.projected = projected
        self.cap = cap
        super().__init__(
            f"explicit expansion refused: {projected} metamers projected, cap is {cap}"
        )


def node_cap() -> int:
    return int(os.environ.get("FSTM_NODE_CAP", DEFAULT_NODE_CAP))


def needle_active(birth: int | np.ndarray, cycle: int, lifespan: int):
    age = cycle - birth
    return (age >= 0) & (age < lifespan)


@dataclass
class StructureCounts:
    """Organ and axis counts indexed by PA and growth cycle.

    Array entries ``[k - 1, i - 1]`` refer to PA k and cycle i. Every metamer
    carries one internode and one needle cohort, so new needle counts equal
    new internode counts.
    """

    pa_max: int
    horizon: int
    needle_lifespan: int
    multiplicity: dict[AxisClassKey, int]
    new_internodes: np.ndarray
    living_internodes: np.ndarray
    active_needles: np.ndarray

    @property
    def new_needles(self) -> np.ndarray:
        return self.new_internodes

    @property
    def total_internodes(self) -> int:
        return int(self.new_internodes.sum())

    def classes_at(self, cycle: int) -> list[AxisClassKey]:
        return sorted(k for k in self.multiplicity if k.birth_cycle <= cycle)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StructureCounts):
            return NotImplemented
        return (
            self.pa_max == other.pa_max
            and self.horizon == other.horizon
            and self.needle_lifespan == other.needle_lifespan
            and self.multiplicity == other.multiplicity
            and np.array_equal(self.new_internodes, other.new_internodes)
            and np.array_equal(self.living_internodes, other.living_internodes)
            and np.array_equal(self.active_needles, other.active_needles)
        )


def _derive_counts(
    pa_max: int, horizon: int, lifespan: int, multiplicity: dict[AxisClassKey, int]
) -> StructureCounts:
    new = np.zeros((pa_max, horizon), dtype=np.int64)
    for (k, a), m in multiplicity.items():
        # an axis born at a adds one metamer at every cycle a..horizon
        new[k - 1, a - 1 :] += m
    living = np.cumsum(new, axis=1)
    active = np.zeros_like(new)
    for i in range(1, horizon + 1):
        lo = max(1, i - lifespan + 1)
        active[:, i - 1] = new[:, lo - 1 : i].sum(axis=1)
    return StructureCounts(pa_max, horizon, lifespan, multiplicity, new, living, active)


def build_counts(rules: OrganogenesisRules, needle_lifespan: int = 2) -> StructureCounts:
    """Axis-class multiplicities and organ counts, without expanding the tree.

    ``M(1, 1) = 1`` and ``M(k+1, t+1) = n_b(k) * sum_{a <= t} M(k, a)``.
    Cost is O(pa_max * horizon**2).
    """
    n = rules.horizon
    mult: dict[AxisClassKey, int] = {AxisClassKey(1, 1): 1}
    for k in range(1, rules.pa_max):
        nb = rules.n_b(k)
        if nb == 0:
            break
        running = 0
        for t in range(1, n):
            running += mult.get(AxisClassKey(k, t), 0)
            if running:
                mult[AxisClassKey(k + 1, t + 1)] = nb * running
    return _derive_counts(rules.pa_max, n, needle_lifespan, mult)


@dataclass
class ExplicitTree:
    """Every metamer of the tree as parallel arrays.

    Node ids increase with birth cycle, so every child has a larger id than
    its parent. ``parent`` is the previous metamer on the same axis, or the
    bearing metamer for the first metamer of a lateral axis (``-1`` for the
    root). ``children`` holds the next metamer on the axis first, followed by
    the first metamers of the laterals the node bears.
    """

    rules: OrganogenesisRules
    pa: np.ndarray
    birth: np.ndarray
    rank: np.ndarray
    axis: np.ndarray
    parent: np.ndarray
    children: list[list[int]] = field(repr=False)
    axis_pa: list[int] = field(repr=False)
    axis_birth: list[int] = field(repr=False)

    def __len__(self) -> int:
        return len(self.pa)

    @property
    def n_axes(self) -> int:
        return len(self.axis_pa)

    @property
    def n_lateral_axes(self) -> int:
        return self.n_axes - 1


def expand_explicit(rules: OrganogenesisRules, cap: int | None = None) -> ExplicitTree:
    """Materialize every metamer of the tree.

    Raises:
        ExpansionTooLarge: if the projected metamer count exceeds ``cap``
            (default: ``FSTM_NODE_CAP`` or 10**7). Nothing is allocated.
    """
    cap = node_cap() if cap is None else cap
    projected = build_counts(rules).total_internodes
    if projected > cap:
        raise ExpansionTooLarge(projected, cap)

    pa: list[int] = []
    birth: list[int] = []
    rank: list[int] = []
    axis: list[int] = []
    parent: list[int] = []
    children: list[list[int]] = []
    axis_pa = [1]
    axis_birth = [1]
    axis_bearer = [-1]
    axis_tip = [-1]
    born_prev: list[int] = []

    for i in range(1, rules.horizon + 1):
        for node in born_prev:
            k = pa[node]
            for _ in range(rules.n_b(k)):
                axis_pa.append(k + 1)
                axis_birth.append(i)
                axis_bearer.append(node)
                axis_tip.append(-1)
        born_now = []
        for ax in range(len(axis_pa)):
            if axis_birth[ax] > i:
                continue
            node = len(pa)
            up = axis_tip[ax] if axis_tip[ax] >= 0 else axis_bearer[ax]
            pa.append(axis_pa[ax])
            birth.append(i)
            rank.append(i - axis_birth[ax] + 1)
            axis.append(ax)
            parent.append(up)
            children.append([])
            if up >= 0:
                if axis_tip[ax] >= 0:
                    children[up].insert(0, node)
                else:
                    children[up].append(node)
            axis_tip[ax] = node
            born_now.append(node)
        born_prev = born_now

    as_arr = lambda xs: np.asarray(xs, dtype=np.int64)  # noqa: E731
    return ExplicitTree(
        rules,
        as_arr(pa),
        as_arr(birth),
        as_arr(rank),
        as_arr(axis),
        as_arr(parent),
        children,
        axis_pa,
        axis_birth,
    )


def count_from_explicit(tree: ExplicitTree, needle_lifespan: int = 2) -> StructureCounts:
    mult: dict[AxisClassKey, int] = {}
    for k, a in zip(tree.axis_pa, tree.axis_birth):
        key = AxisClassKey(k, a)
        mult[key] = mult.get(key, 0) + 1
    counts = _derive_counts(tree.rules.pa_max, tree.rules.horizon, needle_lifespan, mult)
    # recount organs straight from the nodes rather than trusting the axes
    new = np.zeros_like(counts.new_internodes)
    np.add.at(new, (tree.pa - 1, tree.birth - 1), 1)
    counts.new_internodes = new
    counts.living_internodes = np.cumsum(new, axis=1)
    active = np.zeros_like(new)
    for i in range(1, tree.rules.horizon + 1):
        on = needle_active(tree.birth, i, needle_lifespan)
        np.add.at(active[:, i - 1], tree.pa[on] - 1, 1)
    counts.active_needles = active
    return counts


NeedleWeights = Callable[[AxisClassKey], np.ndarray]


def leaves_above(
    rules: OrganogenesisRules,
    cycle: int,
    lifespan: int = 2,
    include_own: bool = True,
    needle_weight: NeedleWeights | None = None,
    counts: StructureCounts | None = None,
) -> dict[AxisClassKey, np.ndarray]:
    """Foliage above every metamer position of every axis class at ``cycle``.

    For the metamer of rank ``rho`` on an axis of class ``(k, a)`` the result
    sums the active needles at ranks ``>= rho`` of that axis (rank ``rho``
    itself only when ``include_own``) and the whole active foliage of every
    lateral borne at ranks ``>= rho``. Laterals sit at the top node of their
    bearing metamer, hence above its base.

    Args:
        needle_weight: maps a class key to per-rank needle weights (length
            equal to the metamer count at ``cycle``). ``None`` counts one
            per needle cohort.

    Returns:
        Per-class arrays indexed by ``rank - 1``. The value is the same for
        every copy of the class.
    """
    if counts is None:
        counts = build_counts(rules, lifespan)
    keys = counts.classes_at(cycle)
    out: dict[AxisClassKey, np.ndarray] = {}
    whole: dict[AxisClassKey, float] = {}
    # higher PA first: a class's foliage needs its laterals' totals
    for key in sorted(keys, key=lambda kk: (-kk.pa, kk.birth_cycle)):
        k, a = key
        n = cycle - a + 1
        births = np.arange(a, a + n)
        own = needle_active(births, cycle, lifespan).astype(float)
        if needle_weight is not None:
            own = own * needle_weight(key)
        lateral = np.zeros(n)
        nb = rules.n_b(k)
        if nb:
            for rho in range(1, n + 1):
                lateral[rho - 1] = nb * whole.get(AxisClassKey(k + 1, a + rho), 0.0)
        suffix = np.cumsum((own + lateral)[::-1])[::-1]
        whole[key] = float(suffix[0])
        out[key] = suffix if include_own else suffix - own
    return out


def explicit_leaves_above(
    tree: ExplicitTree,
    cycle: int,
    lifespan: int = 2,
    include_own: bool = True,
    needle_weight: np.ndarray | None = None,
) -> np.ndarray:
    """Per-node foliage above, by direct traversal of the explicit tree.

    Nodes not yet born at ``cycle`` get 0. ``needle_weight`` is an optional
    per-node array.
    """
    n = len(tree)
    own = needle_active(tree.birth, cycle, lifespan).astype(float)
    if needle_weight is not None:
        own = own * needle_weight
    subtree = np.zeros(n)
    for node in range(n - 1, -1, -1):
        if tree.birth[node] > cycle:
            continue
        total = own[node]
        for child in tree.children[node]:
            total += subtree[child]
        subtree[node] = total
    return subtree if include_own else subtree - np.where(tree.birth <= cycle, own, 0.0)
