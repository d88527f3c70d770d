"""Exact conditional expectations and the integral against ``mu - nu``.

On the tree a martingale is determined by its increments on the ``m + 1``
branches of each interior node, and those increments are exactly
``Z(u) - Zbar`` on a mark branch and ``-Zbar`` on the ``NoEvent`` branch.
``represent`` inverts this map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RepresentationError
from .processes import PredictableField, bracket_increments, zbar_all
from .scenario import EventTree

MARTINGALE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class MartingalePath:
    """Martingale value at every node, ``M_0 = 0``."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def increments(self, tree: EventTree) -> np.ndarray:
        """``M(child) - M(parent)``, shape ``(n_interior, m + 1)``."""
        v = self.values
        kids = v[1:].reshape(tree.n_interior, tree.branching)
        return kids - v[: tree.n_interior, None]


def backward_expectation(tree: EventTree, leaf_values) -> np.ndarray:
    """``E[payoff | node]`` at every node, flat."""
    vals = np.asarray(leaf_values, dtype=float)
    if vals.shape != (tree.n_leaves,):
        raise ValueError(f"need {tree.n_leaves} leaf values, got shape {vals.shape}")
    out = np.empty(tree.n_nodes)
    out[tree.leaves] = vals
    for k in range(tree.periods - 1, -1, -1):
        vals = np.einsum("vc,vc->v", tree.child_prob[k], vals.reshape(-1, tree.branching))
        out[tree.level_slice(k)] = vals
    return out


def conditional_expectation(tree: EventTree, node: int, leaf_payoff) -> float:
    """Probability-weighted average of ``leaf_payoff`` over the subtree of ``node``.

    ``leaf_payoff`` is either an array over all leaves or a callable taking
    the flat leaf index.
    """
    sub = tree.subtree_leaves(node)
    if callable(leaf_payoff):
        vals = np.array([leaf_payoff(v) for v in range(sub.start, sub.stop)], dtype=float)
    else:
        vals = np.asarray(leaf_payoff, dtype=float)
        if vals.shape == (tree.n_leaves,):
            vals = vals[sub.start - tree.offset(tree.periods) : sub.stop - tree.offset(tree.periods)]
        elif vals.shape != (sub.stop - sub.start,):
            raise ValueError("leaf_payoff must cover all leaves or the subtree leaves")
    level = tree.level_of(node)
    k = node - tree.offset(level)
    for lev in range(tree.periods - 1, level - 1, -1):
        width = tree.branching ** (lev - level)
        probs = tree.child_prob[lev][k * width : (k + 1) * width]
        vals = np.einsum("vc,vc->v", probs, vals.reshape(-1, tree.branching))
    return float(vals[0])


def branch_increments(tree: EventTree, Z: PredictableField) -> np.ndarray:
    """Increment of ``int Z d(mu - nu)`` on each branch, shape ``(n_interior, m + 1)``."""
    zb = zbar_all(tree, Z)
    inc = np.empty((tree.n_interior, tree.branching))
    inc[:, 0] = -zb
    inc[:, 1:] = Z.values - zb[:, None]
    return inc


def integrate(tree: EventTree, Z: PredictableField) -> MartingalePath:
    """Stochastic integral of ``Z`` against the compensated point measure."""
    inc = branch_increments(tree, Z)
    values = np.zeros(tree.n_nodes)
    for k in range(tree.periods):
        parent = values[tree.level_slice(k)]
        rows = inc[tree.level_slice(k)]
        values[tree.level_slice(k + 1)] = (parent[:, None] + rows).ravel()
    return MartingalePath(values)


def martingale_defects(tree: EventTree, M: MartingalePath) -> np.ndarray:
    """``E[M(child) - M(parent) | parent]`` at every interior node."""
    child_prob = np.concatenate(tree.child_prob)
    return np.einsum("vc,vc->v", child_prob, M.increments(tree))


def represent(tree: EventTree, M: MartingalePath, tol: float = MARTINGALE_TOL) -> PredictableField:
    """Predictable integrand ``Z`` with ``M = M_0 + int Z d(mu - nu)``.

    ``Z(u) = m(u) - m_0`` where ``m`` are the branch increments; when
    ``dK = 1`` the ``NoEvent`` branch is unreachable and ``m_0`` is taken
    as 0.

    Raises:
        RepresentationError: if some node's conditional increment mean
            exceeds ``tol`` in absolute value.
    """
    defects = martingale_defects(tree, M)
    if defects.size:
        worst = int(np.argmax(np.abs(defects)))
        if abs(defects[worst]) > tol:
            raise RepresentationError(
                f"not a martingale: conditional mean increment {defects[worst]:.3e} at node {worst}",
                worst,
                float(defects[worst]),
            )
    inc = M.increments(tree)
    jump = np.concatenate(tree.jump)
    base = np.where(jump < 1.0, inc[:, 0], 0.0)
    return PredictableField(inc[:, 1:] - base[:, None])


def bracket(tree: EventTree, Z: PredictableField) -> np.ndarray:
    """Predictable bracket ``<M, M>`` of ``M = integrate(Z)`` at every node (cumulative)."""
    inc = bracket_increments(tree, Z)
    values = np.zeros(tree.n_nodes)
    for k in range(tree.periods):
        parent = values[tree.level_slice(k)] + inc[tree.level_slice(k)]
        values[tree.level_slice(k + 1)] = np.repeat(parent, tree.branching)
    return values
