import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbsdetree import (
    Action,
    LadlagProcess,
    Obstacle,
    ObstacleError,
    StoppingRule,
    SupermartingaleError,
    brute_force_value,
    check_flat_off,
    epsilon_optimal_time,
    mertens_decompose,
    snell_envelope,
)
from rbsdetree.analysis import count_rules, enumerate_rules

from conftest import make_tree, random_instance


def test_constant_obstacle():
    tree = make_tree(3)
    Y = snell_envelope(tree, Obstacle.constant(tree, 1.7))
    assert np.all(Y.at == 1.7) and np.all(Y.post == 1.7)
    parts = mertens_decompose(tree, Y)
    assert np.all(parts.A == 0) and np.all(parts.C == 0) and np.all(parts.M.values == 0)


def test_derived_value(derived):
    tree, obs = derived
    Y = snell_envelope(tree, obs)
    assert Y.at[0] == 0.75
    parts = mertens_decompose(tree, Y)
    assert np.all(parts.dA == 0) and np.all(parts.dC == 0)
    assert np.any(parts.M.values != 0)
    assert abs(np.dot(tree.path_prob[-1], parts.M.values[tree.leaves])) < 1e-15


def test_right_jump_instance(right_jump):
    tree, obs = right_jump
    Y = snell_envelope(tree, obs)
    assert (Y.at[0], Y.post[0]) == (2.0, 0.0)
    parts = mertens_decompose(tree, Y)
    assert parts.dC[0] == 2.0 and np.all(parts.A == 0)
    assert np.all(parts.C == 2.0) and np.all(parts.C_left[1:] == 2.0) and parts.C_left[0] == 0.0


def test_invalid_obstacle_rejected():
    tree = make_tree(1)
    post = np.zeros(tree.n_nodes)
    post[0] = 1.0
    with pytest.raises(ObstacleError):
        snell_envelope(tree, Obstacle.from_arrays(tree, np.zeros(tree.n_nodes), post))


def test_gain_is_a_rate():
    tree = make_tree(4, horizon=2.0)
    Y = snell_envelope(tree, Obstacle.constant(tree, 0.0), 1.0)
    np.testing.assert_allclose(Y.at[0], 2.0, rtol=1e-15)
    np.testing.assert_allclose(Y.at[tree.level_slice(2)], 1.0, rtol=1e-15)


def test_decompose_rejects_non_supermartingale():
    tree = make_tree(1)
    Y = LadlagProcess([0.0, 1.0, 1.0, 1.0], [0.0, 1.0, 1.0, 1.0])
    with pytest.raises(SupermartingaleError) as err:
        mertens_decompose(tree, Y)
    assert err.value.node == 0
    with pytest.raises(SupermartingaleError):
        mertens_decompose(tree, LadlagProcess([0.0, 0, 0, 0], [1.0, 0, 0, 0]))


def test_epsilon_rule_examples(derived):
    tree = make_tree(2)
    obs = Obstacle.constant(tree, 1.0)
    Y = snell_envelope(tree, obs)
    rule = epsilon_optimal_time(tree, Y, obs)
    assert rule.stop_node(tree, tree.offset(2)) == (0, Action.STOP_AT)

    tree, obs = derived
    Y = snell_envelope(tree, obs)
    rule = epsilon_optimal_time(tree, Y, obs, eps=0.0)
    for leaf in range(tree.offset(2), tree.n_nodes):
        assert rule.stop_node(tree, leaf) == (leaf, Action.STOP_AT)
    assert rule.value(tree, obs) == 0.75
    big = epsilon_optimal_time(tree, Y, obs, eps=float(np.max(Y.at - obs.at)))
    assert big.actions[0] == Action.STOP_AT
    with pytest.raises(ValueError):
        epsilon_optimal_time(tree, Y, obs, eps=-1.0)


def test_flat_off_examples(right_jump):
    tree = make_tree(2)
    obs = Obstacle.constant(tree, 0.0)
    Y = snell_envelope(tree, obs)
    parts = mertens_decompose(tree, Y)
    assert check_flat_off(tree, parts, Y, obs, epsilon_optimal_time(tree, Y, obs)).passed

    tree, obs = right_jump
    Y = snell_envelope(tree, obs)
    parts = mertens_decompose(tree, Y)
    rule = epsilon_optimal_time(tree, Y, obs)
    assert rule.actions[0] == Action.STOP_AT
    assert check_flat_off(tree, parts, Y, obs, rule).passed


def test_flat_off_detects_charge_before_stop():
    tree = make_tree(2)
    at = np.zeros(tree.n_nodes)
    at[0] = 2.0
    obs = Obstacle.from_arrays(tree, at, np.zeros(tree.n_nodes))
    Y = snell_envelope(tree, obs)
    parts = mertens_decompose(tree, Y)
    # a rule that ignores the hit at the root lets C charge before stopping
    late = StoppingRule(np.where(tree.node_level == 2, Action.STOP_AT, Action.CONTINUE))
    report = check_flat_off(tree, parts, Y, obs, late)
    assert not report.passed and report.worst_increment == 2.0


def test_post_slot_option():
    tree = make_tree(1)
    at = np.array([3.0, 0.0, 0.0, 0.0])
    obs = Obstacle.from_arrays(tree, at, np.array([1.0, 0.0, 0.0, 0.0]))
    Y = snell_envelope(tree, obs)
    rule = epsilon_optimal_time(tree, Y, obs, use_post=True)
    assert rule.actions[0] == Action.STOP_AT
    lower = Obstacle.from_arrays(tree, np.array([1.0, 0, 0, 0]), np.array([1.0, 0, 0, 0]))
    Y2 = LadlagProcess([2.0, 0, 0, 0], [1.0, 0, 0, 0])
    rule2 = epsilon_optimal_time(tree, Y2, lower, use_post=True)
    assert rule2.actions[0] == Action.STOP_RIGHT_AFTER


def test_rule_values_cover_all_enumerated_rules():
    tree, obs, rng = random_instance(11, shapes=[(2, 1)])
    g = rng.normal(size=tree.n_interior)
    values = [r.value(tree, obs, g) for r in enumerate_rules(tree)]
    assert len(values) == count_rules(tree) == 11
    assert abs(max(values) - snell_envelope(tree, obs, g).at[0]) < 1e-12
    assert abs(max(values) - brute_force_value(tree, obs, g)) < 1e-12


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_snell_properties(seed):
    tree, obs, rng = random_instance(seed, shapes=[(1, 1), (2, 1), (3, 1), (1, 2), (2, 2)])
    g = rng.normal(size=tree.n_interior)
    Y = snell_envelope(tree, obs, g)
    assert np.all(Y.at >= obs.at) and np.all(Y.post >= obs.post)
    assert np.array_equal(Y.at, np.maximum(obs.at, Y.post))
    assert abs(Y.at[0] - brute_force_value(tree, obs, g)) < 1e-12
    parts = mertens_decompose(tree, Y, g)
    interior = slice(0, tree.n_interior)
    assert np.all(Y.post[interior][parts.dA > 0] == obs.post[interior][parts.dA > 0])
    assert np.all(Y.at[parts.dC > 0] == obs.at[parts.dC > 0])
    # reconstruction Y = Y0 - int g + M - A - C_- along every path
    drift = np.zeros(tree.n_nodes)
    for k in range(tree.periods):
        drift[tree.level_slice(k + 1)] = np.repeat(drift[tree.level_slice(k)] + g[tree.level_slice(k)] * tree.dt, tree.branching)
    rebuilt = Y.at[0] - drift + parts.M.values - parts.A - parts.C_left
    assert np.max(np.abs(rebuilt - Y.at)) < 1e-12
    # start at an interior node too
    start = int(rng.integers(tree.n_interior))
    assert abs(Y.at[start] - brute_force_value(tree, obs, g, start=start)) < 1e-12
