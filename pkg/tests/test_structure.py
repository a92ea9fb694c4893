import numpy as np
import pytest
from hypothesis import given, settings

from fstm.config import OrganogenesisRules
from fstm.structure import (
    AxisClassKey,
    ExpansionTooLarge,
    build_counts,
    count_from_explicit,
    expand_explicit,
    explicit_leaves_above,
    leaves_above,
)

from conftest import rule_sets


def test_unbranched_axis():
    counts = build_counts(OrganogenesisRules(1, (), 6))
    assert counts.total_internodes == 6
    assert counts.multiplicity == {AxisClassKey(1, 1): 1}


def test_two_pa_enumeration():
    rules = OrganogenesisRules(2, (2,), 3)
    counts = build_counts(rules)
    assert counts.total_internodes == 9
    assert counts.multiplicity == {
        AxisClassKey(1, 1): 1,
        AxisClassKey(2, 2): 2,
        AxisClassKey(2, 3): 2,
    }
    assert counts.new_internodes[0].tolist() == [1, 1, 1]
    assert counts.new_internodes[1, 1] == 2
    assert counts.new_internodes[1, 2] == 4


def test_explicit_tree_shape():
    tree = expand_explicit(OrganogenesisRules(2, (2,), 3))
    assert len(tree) == 9
    assert tree.n_lateral_axes == 4
    path = expand_explicit(OrganogenesisRules(1, (), 4))
    assert len(path) == 4
    assert path.parent.tolist() == [-1, 0, 1, 2]


def test_explicit_invariants():
    tree = expand_explicit(OrganogenesisRules(3, (2, 2), 6))
    for node in range(1, len(tree)):
        up = tree.parent[node]
        assert up < node
        if tree.axis[up] == tree.axis[node]:
            assert tree.birth[node] == tree.birth[up] + 1
        else:
            # first metamer of a lateral: one cycle after its bearer
            assert tree.birth[node] == tree.birth[up] + 1
            assert tree.pa[node] == tree.pa[up] + 1


def test_single_node_counts():
    counts = count_from_explicit(expand_explicit(OrganogenesisRules(1, (), 1)))
    assert counts.new_internodes.tolist() == [[1]]


def test_three_pa_counts_match_explicit():
    rules = OrganogenesisRules(3, (2, 2), 6)
    assert build_counts(rules) == count_from_explicit(expand_explicit(rules))


def test_cap_refuses_before_allocating():
    rules = OrganogenesisRules(3, (3, 3), 8)
    with pytest.raises(ExpansionTooLarge) as info:
        expand_explicit(rules, cap=100)
    assert info.value.projected == build_counts(rules).total_internodes


def test_cap_from_environment(monkeypatch):
    monkeypatch.setenv("FSTM_NODE_CAP", "5")
    with pytest.raises(ExpansionTooLarge):
        expand_explicit(OrganogenesisRules(2, (2,), 3))


@settings(max_examples=60)
@given(rule_sets(max_pa=3, max_horizon=8, max_branches=3))
def test_counts_equal_explicit(rules):
    for lifespan in (1, 2, 3):
        assert build_counts(rules, lifespan) == count_from_explicit(expand_explicit(rules), lifespan)


def test_unbranched_suffix_sums():
    rules = OrganogenesisRules(1, (), 3)
    above = leaves_above(rules, 3, lifespan=3)
    assert above[AxisClassKey(1, 1)].tolist() == [3, 2, 1]
    own_excluded = leaves_above(rules, 3, lifespan=3, include_own=False)
    assert own_excluded[AxisClassKey(1, 1)].tolist() == [2, 1, 0]


def test_terminal_metamer_holds_own_needles():
    above = leaves_above(OrganogenesisRules(2, (2,), 4), 4)
    for values in above.values():
        assert values[-1] == 1


def test_stem_base_foliage_with_all_needles_active():
    # own + ranks 2,3 (3), two GC-2 laterals with 2 metamers (4), two GC-3 laterals (2)
    rules = OrganogenesisRules(2, (2,), 3)
    assert leaves_above(rules, 3, lifespan=3)[AxisClassKey(1, 1)][0] == 9
    # with a 2-cycle lifespan the cycle-1 cohort has dropped
    assert leaves_above(rules, 3, lifespan=2)[AxisClassKey(1, 1)][0] == 8
    tree = expand_explicit(rules)
    assert explicit_leaves_above(tree, 3, lifespan=3)[0] == 9
    assert explicit_leaves_above(tree, 3, lifespan=2)[0] == 8


@settings(max_examples=40)
@given(rule_sets(max_pa=3, max_horizon=7, max_branches=3))
def test_leaves_above_matches_traversal(rules):
    tree = expand_explicit(rules)
    axis_pa = np.asarray(tree.axis_pa)[tree.axis]
    axis_birth = np.asarray(tree.axis_birth)[tree.axis]
    for cycle in range(1, rules.horizon + 1):
        for own in (True, False):
            fact = leaves_above(rules, cycle, 2, own)
            direct = explicit_leaves_above(tree, cycle, 2, own)
            born = tree.birth <= cycle
            mapped = np.array(
                [fact[AxisClassKey(p, b)][r - 1] for p, b, r in zip(axis_pa[born], axis_birth[born], tree.rank[born])]
            )
            assert np.array_equal(mapped, direct[born])


def test_node_ratio_grows_with_horizon():
    ratios = []
    for h in (4, 8, 12, 16):
        counts = build_counts(OrganogenesisRules(3, (2, 2), h))
        ratios.append(counts.total_internodes / len(counts.multiplicity))
    assert all(b > a for a, b in zip(ratios, ratios[1:]))
