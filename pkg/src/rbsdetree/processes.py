"""Ladlag and predictable processes on a scenario tree, and the weighted norms.

A :class:`LadlagProcess` stores two numbers per node: the value at the grid
time and the value on the open interval right after it.  Its left limit at a
node is the parent's post value.  A :class:`PredictableField` stores, for
each period, one value per mark at the parent (level ``i - 1``) node, which is
exactly the information available just before ``t_i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import EventTree


@dataclass(frozen=True, eq=False)
class LadlagProcess:
    at: np.ndarray
    post: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "at", np.asarray(self.at, dtype=float))
        object.__setattr__(self, "post", np.asarray(self.post, dtype=float))

    @classmethod
    def right_continuous(cls, values) -> "LadlagProcess":
        v = np.asarray(values, dtype=float)
        return cls(v, v.copy())

    def left_limit(self, tree: EventTree) -> np.ndarray:
        """``X_{t-}`` per node; NaN at the root where it is undefined."""
        out = np.full(tree.n_nodes, np.nan)
        out[1:] = np.repeat(self.post[: tree.n_interior], tree.branching)
        return out

    def left_jump(self, tree: EventTree) -> np.ndarray:
        return self.at - self.left_limit(tree)

    def right_jump(self) -> np.ndarray:
        return self.post - self.at

    def __sub__(self, other: "LadlagProcess") -> "LadlagProcess":
        return LadlagProcess(self.at - other.at, self.post - other.post)

    def __add__(self, other: "LadlagProcess") -> "LadlagProcess":
        return LadlagProcess(self.at + other.at, self.post + other.post)

    def __mul__(self, c: float) -> "LadlagProcess":
        return LadlagProcess(self.at * c, self.post * c)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class PredictableField:
    """Mark-indexed integrand; ``values[v, j]`` is ``Z_{t_{i+1}}(u_j)`` at interior node ``v``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("predictable field values must have shape (n_interior, m)")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, tree: EventTree) -> "PredictableField":
        return cls(np.zeros((tree.n_interior, tree.n_marks)))

    def level(self, tree: EventTree, k: int) -> np.ndarray:
        """Rows for period ``k + 1`` (level-``k`` parents)."""
        return self.values[tree.level_slice(k)]

    def __sub__(self, other: "PredictableField") -> "PredictableField":
        return PredictableField(self.values - other.values)

    def __add__(self, other: "PredictableField") -> "PredictableField":
        return PredictableField(self.values + other.values)

    def __mul__(self, c: float) -> "PredictableField":
        return PredictableField(self.values * c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class WeightedNormConfig:
    beta: float = 0.0

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")


def _check_period(tree: EventTree, node: int, period: int | None) -> int:
    level = tree.level_of(node)
    if level >= tree.periods:
        raise IndexError(f"node {node} is a leaf; no period follows it")
    if period is not None and period != level + 1:
        raise IndexError(f"node {node} sits at level {level}; period must be {level + 1}")
    return level


def zbar_all(tree: EventTree, Z: PredictableField) -> np.ndarray:
    """Compensated mean ``dK * sum_j phi_j Z(u_j)`` at every interior node."""
    jump = np.concatenate(tree.jump)
    phi = np.concatenate(tree.kernel)
    return jump * np.einsum("vj,vj->v", phi, Z.values)


def zbar(tree: EventTree, Z: PredictableField, node: int, period: int | None = None) -> float:
    level = _check_period(tree, node, period)
    k = node - tree.offset(level)
    return float(tree.jump[level][k] * (tree.kernel[level][k] @ Z.values[node]))


def bracket_increments(tree: EventTree, Z: PredictableField) -> np.ndarray:
    """Per interior node: ``dK sum_j phi_j |Z_j - Zbar|^2 + |Zbar|^2 (1 - dK)``."""
    jump = np.concatenate(tree.jump)
    phi = np.concatenate(tree.kernel)
    zb = zbar_all(tree, Z)
    spread = np.einsum("vj,vj->v", phi, (Z.values - zb[:, None]) ** 2)
    return jump * spread + zb**2 * (1.0 - jump)


def h2_norm(tree: EventTree, Z: PredictableField, beta: float = 0.0) -> float:
    """Squared ``H^{2,beta}`` norm of ``Z``, an exact sum over the tree."""
    WeightedNormConfig(beta)
    inc = bracket_increments(tree, Z)
    prob = np.concatenate(tree.path_prob[:-1])
    # period i+1 jumps at t_{i+1}
    weight = np.exp(beta * (tree.node_level[: tree.n_interior] + 1) * tree.dt)
    return float(np.sum(prob * weight * inc))


def s2_norm(tree: EventTree, X: LadlagProcess, beta: float = 0.0) -> float:
    """Squared ``S^{2,beta}`` norm: ``E[ess sup_tau e^{beta tau} X_tau^2]``.

    The essential supremum over stopping times is the Snell envelope of
    ``e^{beta t} X_t^2`` on the tree; only at-values are reachable by a
    stopping time, so post values do not enter.
    """
    WeightedNormConfig(beta)
    n = tree.periods
    reward = np.exp(beta * tree.node_time) * X.at**2
    w = reward[tree.level_slice(n)]
    for k in range(n - 1, -1, -1):
        cont = np.einsum("vc,vc->v", tree.child_prob[k], w.reshape(-1, tree.branching))
        w = np.maximum(reward[tree.level_slice(k)], cont)
    return float(w[0])


def lipschitz_z_norm(
    tree: EventTree,
    Z: PredictableField,
    Z2: PredictableField,
    node: int,
    period: int | None = None,
) -> float:
    """Distance between two integrands in the metric of the Lipschitz bound.

    ``( sum_j phi_j |d_j - <phi, d>|^2 + (1 - dK) |<phi, d>|^2 )^{1/2}``
    with ``d = Z - Z2`` at the given interior node.
    """
    level = _check_period(tree, node, period)
    k = node - tree.offset(level)
    phi = tree.kernel[level][k]
    dk = tree.jump[level][k]
    d = Z.values[node] - Z2.values[node]
    mean = phi @ d
    return float(np.sqrt(phi @ (d - mean) ** 2 + (1.0 - dk) * mean**2))
