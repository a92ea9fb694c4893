import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings
import hypothesis.strategies as st

from fstm.compartment import simulate_compartments, structural_weights
from fstm.config import OrganogenesisRules
from fstm.engine import simulate
from fstm.patterns import extract_pattern2
from fstm.presets import load_preset

from conftest import make_params, parameter_sets, rule_sets


def assert_same_vector(a, b, rtol=1e-9):
    assert a.keys == b.keys
    np.testing.assert_allclose(a.values, b.values, rtol=rtol, atol=1e-300)


@pytest.mark.parametrize("name", ["tree1", "tree2"])
def test_presets_match_full_engine(name):
    params, rules = load_preset(name)
    assert_same_vector(
        extract_pattern2(simulate_compartments(params, rules)),
        extract_pattern2(simulate(params, rules)),
    )


@settings(max_examples=30)
@given(st.data())
def test_random_configs_match_full_engine(data):
    rules = data.draw(rule_sets(max_pa=4, max_horizon=10, max_branches=3))
    params = data.draw(parameter_sets(rules.pa_max))
    fast = simulate_compartments(params, rules)
    full = simulate(params, rules)
    assert_same_vector(extract_pattern2(fast), extract_pattern2(full))
    np.testing.assert_allclose(fast.production, [r.production for r in full.records], rtol=1e-9)


def test_mass_weighted_foliage_refused():
    with pytest.raises(ValueError):
        simulate_compartments(make_params(foliage_mass_weighted=True), OrganogenesisRules(3, (2, 1), 4))


def test_weights_are_cached_and_read_only():
    rules = OrganogenesisRules(3, (3, 1), 6)
    w1 = structural_weights(rules, 2, True)
    assert structural_weights(rules, 2, True) is w1
    with pytest.raises(ValueError):
        w1.foliage[0, 0, 0] = 1.0


def test_stem_only_tree_has_empty_crown():
    trace = simulate_compartments(make_params(pa_max=1), OrganogenesisRules(1, (), 5))
    assert trace.crown_wood == 0.0 and trace.crown_needle == 0.0
