import numpy as np
import pytest

from rbsdetree import AffineDriver, Obstacle, ScenarioSpec, build_tree
from rbsdetree.scenario import random_obstacle, random_spec


def make_tree(periods=2, marks=("a", "b"), event_prob=0.5, kernel=None, horizon=1.0):
    kernel = [1.0 / len(marks)] * len(marks) if kernel is None else kernel
    return build_tree(ScenarioSpec(horizon, periods, marks, event_prob, kernel))


def derived_instance():
    """Two periods, dK = 0.5, uniform kernel, reward 1 once an event has occurred by T."""
    tree = make_tree(2)
    terminal = (tree.event_count[tree.leaves] >= 1).astype(float)
    return tree, Obstacle.terminal(tree, terminal)


def right_jump_instance():
    tree = make_tree(2)
    obs = Obstacle.constant(tree, 0.0).with_right_jump(tree, 0, 0.0)
    at = obs.at.copy()
    at[0] = 2.0
    return tree, Obstacle.from_arrays(tree, at, obs.post)


def random_instance(seed, **kwargs):
    rng = np.random.default_rng(seed)
    tree = build_tree(random_spec(rng, **kwargs))
    return tree, random_obstacle(tree, rng), rng


def random_affine(tree, rng, max_l=2.0):
    a = rng.uniform(-1.0, 1.0)
    b = rng.normal(size=tree.n_marks)
    driver = AffineDriver(a, b, rng.normal())
    L = driver.lipschitz(tree)
    if L > max_l:
        driver = AffineDriver(a * max_l / L, b * max_l / L, driver.g0)
    return driver


@pytest.fixture
def derived():
    return derived_instance()


@pytest.fixture
def right_jump():
    return right_jump_instance()
