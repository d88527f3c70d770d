import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbsdetree import Obstacle, ScenarioError, ScenarioSpec, build_tree, validate_obstacle
from rbsdetree.errors import ObstacleError
from rbsdetree.scenario import random_spec

from conftest import make_tree


def test_one_period_leaf_probabilities():
    tree = make_tree(1)
    np.testing.assert_allclose(tree.path_prob[1], [0.5, 0.25, 0.25], rtol=0, atol=1e-15)
    assert tree.n_leaves == 3


def test_two_period_probabilities_sum_to_one():
    tree = make_tree(2)
    assert tree.n_leaves == 9
    assert abs(tree.path_prob[2].sum() - 1.0) < 1e-14


def test_no_jump_degenerate():
    tree = make_tree(1, event_prob=0.0)
    assert tree.child_prob[0][0, 0] == 1.0
    assert np.all(tree.compensator_table(0) == 0.0)
    assert np.all(tree.path_prob[1][1:] == 0.0)


def test_compensator_table_and_K():
    tree = make_tree(3, marks=("a", "b"), event_prob=[0.2, 0.5, 1.0], kernel=[0.25, 0.75])
    np.testing.assert_allclose(tree.compensator_table(1)[0], [0.125, 0.375])
    np.testing.assert_allclose(tree.compensator_table(2).sum(axis=1), 1.0)
    for lev, K in enumerate(tree.compensator):
        np.testing.assert_allclose(K, sum([0.0, 0.2, 0.5, 1.0][: lev + 1]))


def test_tree_navigation():
    tree = make_tree(3)
    assert tree.n_nodes == 1 + 3 + 9 + 27
    assert tree.parent(0) is None
    for v in range(1, tree.n_nodes):
        assert v in tree.children(tree.parent(v))
    assert [tree.branch_label(c) for c in tree.children(0)] == ["NoEvent", "a", "b"]
    assert tree.path(tree.node(3, 26)) == [0, 3, 12, 39]
    assert list(tree.event_count[tree.children(3)]) == [1, 2, 2]


@pytest.mark.parametrize("prob", [-0.1, 1.2, float("nan")])
def test_rejects_bad_event_prob(prob):
    with pytest.raises(ScenarioError, match="period 1"):
        make_tree(1, event_prob=prob)


def test_rejects_bad_kernel_names_period():
    with pytest.raises(ScenarioError, match="period 2.*0.9"):
        build_tree(ScenarioSpec(1.0, 2, ("a", "b"), 0.5, [[0.5, 0.5], [0.5, 0.4]]))


def test_kernel_tolerance_is_1e12():
    build_tree(ScenarioSpec(1.0, 1, ("a", "b"), 0.5, [0.5, 0.5 + 5e-13]))
    with pytest.raises(ScenarioError):
        build_tree(ScenarioSpec(1.0, 1, ("a", "b"), 0.5, [0.5, 0.5 + 5e-12]))


@pytest.mark.parametrize("kwargs", [dict(periods=0), dict(horizon=-1.0), dict(marks=())])
def test_rejects_bad_spec(kwargs):
    base = dict(horizon=1.0, periods=1, marks=("a",), event_prob=0.5, mark_kernel=[1.0])
    base.update(kwargs)
    with pytest.raises(ScenarioError):
        ScenarioSpec(**base)


def test_per_node_tables():
    spec = ScenarioSpec(1.0, 2, ("a",), [0.5, [0.1, 0.2]], [[1.0], [[1.0], [1.0]]])
    tree = build_tree(spec)
    np.testing.assert_allclose(tree.child_prob[1][:, 0], [0.9, 0.8])


def test_obstacle_validation_examples():
    tree = make_tree(2)
    assert validate_obstacle(tree, Obstacle.constant(tree, 1.0)).valid
    at = np.zeros(tree.n_nodes)
    at[0] = 2.0
    assert validate_obstacle(tree, Obstacle.from_arrays(tree, at, np.zeros(tree.n_nodes))).valid
    post = np.zeros(tree.n_nodes)
    post[0] = 1.0
    report = validate_obstacle(tree, Obstacle.from_arrays(tree, np.zeros(tree.n_nodes), post))
    assert not report.valid and report.violations == (0,)
    with pytest.raises(ObstacleError):
        report.raise_if_invalid()


def test_obstacle_leaf_post_forced_and_shape_checked():
    tree = make_tree(1)
    obs = Obstacle.from_arrays(tree, np.arange(4.0), np.full(4, -5.0))
    np.testing.assert_array_equal(obs.post[tree.leaves], obs.at[tree.leaves])
    with pytest.raises(ObstacleError):
        Obstacle.from_arrays(tree, np.zeros(3))


def test_nonfinite_obstacle_invalid():
    tree = make_tree(1)
    at = np.zeros(tree.n_nodes)
    at[2] = np.inf
    assert not validate_obstacle(tree, Obstacle.from_arrays(tree, at)).valid


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), per_node=st.booleans())
def test_random_tree_invariants(seed, per_node):
    spec = random_spec(np.random.default_rng(seed), per_node=per_node)
    tree = build_tree(spec)
    for probs in tree.child_prob:
        assert np.all(np.abs(probs.sum(axis=1) - 1.0) <= 1e-14)
    for pp in tree.path_prob:
        assert abs(pp.sum() - 1.0) <= 1e-13
    for k in range(tree.periods):
        K_parent = np.repeat(tree.compensator[k], tree.branching)
        assert np.all(tree.compensator[k + 1] >= K_parent)
        np.testing.assert_allclose(tree.compensator_table(k).sum(axis=1), tree.jump[k], atol=1e-15)
    # generator is reproducible bit for bit
    again = random_spec(np.random.default_rng(seed), per_node=per_node)
    assert again.horizon == spec.horizon and again.seed == spec.seed
    for a, b in zip(again.mark_kernel, spec.mark_kernel):
        assert np.array_equal(a, b)
