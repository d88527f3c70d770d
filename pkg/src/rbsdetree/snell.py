"""Snell envelope of an r.u.s.c. reward with running gain, and its Mertens parts.

Backward recursion on the tree, with ``g`` a gain *rate* paid over each
period ``(t_i, t_{i+1}]``::

    post(v) = max(xi_post(v), g(v) dt + E[at(child) | v])
    at(v)   = max(xi_at(v), post(v))

Stopping strictly inside ``(t_i, t_{i+1})`` is represented by the
``STOP_RIGHT_AFTER`` action, which collects ``xi_post`` and no partial gain.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import SupermartingaleError
from .martingale import MartingalePath
from .processes import LadlagProcess
from .scenario import EventTree, Obstacle, validate_obstacle

DECOMP_TOL = 1e-10


class Action(IntEnum):
    CONTINUE = 0
    STOP_AT = 1
    STOP_RIGHT_AFTER = 2


def as_gain(tree: EventTree, g) -> np.ndarray:
    """Broadcast a gain rate to one value per interior node."""
    if g is None:
        return np.zeros(tree.n_interior)
    arr = np.asarray(g, dtype=float)
    if arr.ndim == 0:
        return np.full(tree.n_interior, float(arr))
    if arr.shape == (tree.n_nodes,):
        return arr[: tree.n_interior].copy()
    if arr.shape != (tree.n_interior,):
        raise ValueError(
            f"gain needs {tree.n_interior} interior values (or {tree.n_nodes} node values)"
        )
    return arr


def continuation(tree: EventTree, at: np.ndarray, gain: np.ndarray, level: int) -> np.ndarray:
    """``g dt + E[at(child)]`` for every node of ``level``.

    Shared by the envelope and the decomposition so that a continuation
    branch yields an exactly zero ``dA``.
    """
    kids = at[tree.level_slice(level + 1)].reshape(-1, tree.branching)
    expect = np.einsum("vc,vc->v", tree.child_prob[level], kids)
    return gain[tree.level_slice(level)] * tree.dt + expect


def snell_envelope(tree: EventTree, obstacle: Obstacle, g=None) -> LadlagProcess:
    """Value process of optimal stopping with reward ``obstacle`` and gain rate ``g``.

    Raises:
        ObstacleError: if the obstacle is not r.u.s.c. or not finite.
    """
    validate_obstacle(tree, obstacle).raise_if_invalid()
    gain = as_gain(tree, g)
    at = np.empty(tree.n_nodes)
    post = np.empty(tree.n_nodes)
    leaves = tree.leaves
    at[leaves] = obstacle.at[leaves]
    post[leaves] = obstacle.at[leaves]
    for k in range(tree.periods - 1, -1, -1):
        sl = tree.level_slice(k)
        post[sl] = np.maximum(obstacle.post[sl], continuation(tree, at, gain, k))
        at[sl] = np.maximum(obstacle.at[sl], post[sl])
    return LadlagProcess(at, post)


@dataclass(frozen=True, eq=False)
class MertensParts:
    """Martingale and the two nondecreasing parts of a strong supermartingale.

    Attributes:
        M: martingale part, ``M_0 = 0``.
        dA: predictable jump ``A_{t_{i+1}} - A_{t_i}`` stored at the level-i node.
        dC: right jump ``C_{t_i} - C_{t_i-} = Y_{t_i} - Y_{t_i+}`` per node.
        A: ``A_{t_i}`` per node (``A_0 = 0``).
        C: ``C_{t_i}`` per node, including the jump at ``t_i``.
    """

    M: MartingalePath
    dA: np.ndarray
    dC: np.ndarray
    A: np.ndarray
    C: np.ndarray

    @property
    def C_left(self) -> np.ndarray:
        """``C_{t_i-}`` per node."""
        return self.C - self.dC

    def A_jump_at(self, tree: EventTree) -> np.ndarray:
        """``A_{t_i} - A_{t_i-}`` per node (0 at the root)."""
        out = np.zeros(tree.n_nodes)
        out[1:] = np.repeat(self.dA, tree.branching)
        return out


def cumulate_predictable(tree: EventTree, inc: np.ndarray) -> np.ndarray:
    """Running sum of per-interior-node increments, seen at the children."""
    out = np.zeros(tree.n_nodes)
    for k in range(tree.periods):
        sl = tree.level_slice(k)
        out[tree.level_slice(k + 1)] = np.repeat(out[sl] + inc[sl], tree.branching)
    return out


def cumulate_adapted(tree: EventTree, inc: np.ndarray) -> np.ndarray:
    """Running sum of per-node increments including the node's own."""
    out = np.empty(tree.n_nodes)
    out[0] = inc[0]
    for k in range(tree.periods):
        sl = tree.level_slice(k)
        out[tree.level_slice(k + 1)] = np.repeat(out[sl], tree.branching) + inc[tree.level_slice(k + 1)]
    return out


def mertens_decompose(
    tree: EventTree, Y: LadlagProcess, g=None, tol: float = DECOMP_TOL
) -> MertensParts:
    """Split ``Y + int g`` into ``Y_0 + M - A - C_-``.

    Raises:
        SupermartingaleError: if some ``dA`` or ``dC`` is below ``-tol``.
    """
    gain = as_gain(tree, g)
    dA = np.empty(tree.n_interior)
    m_inc = np.empty((tree.n_interior, tree.branching))
    for k in range(tree.periods):
        sl = tree.level_slice(k)
        cont = continuation(tree, Y.at, gain, k)
        dA[sl] = Y.post[sl] - cont
        kids = Y.at[tree.level_slice(k + 1)].reshape(-1, tree.branching)
        expect = np.einsum("vc,vc->v", tree.child_prob[k], kids)
        m_inc[sl] = kids - expect[:, None]
    dC = Y.at - Y.post
    for name, arr in (("A", dA), ("C", dC)):
        if arr.size and arr.min() < -tol:
            node = int(np.argmin(arr))
            raise SupermartingaleError(
                f"{name} decreases by {-arr[node]:.3e} at node {node}", node, float(arr[node])
            )
    dA = np.where(dA < 0.0, 0.0, dA)
    dC = np.where(dC < 0.0, 0.0, dC)
    M = np.zeros(tree.n_nodes)
    for k in range(tree.periods):
        sl = tree.level_slice(k)
        M[tree.level_slice(k + 1)] = (M[sl][:, None] + m_inc[sl]).ravel()
    return MertensParts(
        M=MartingalePath(M),
        dA=dA,
        dC=dC,
        A=cumulate_predictable(tree, dA),
        C=cumulate_adapted(tree, dC),
    )


@dataclass(frozen=True, eq=False)
class StoppingRule:
    """Per-node action; a path stops at the first stop action at or below ``start``."""

    actions: np.ndarray
    start: int = 0

    def __post_init__(self):
        object.__setattr__(self, "actions", np.asarray(self.actions, dtype=np.int8))

    def stop_node(self, tree: EventTree, leaf: int) -> tuple[int, Action]:
        """First node on the path from ``start`` to ``leaf`` carrying a stop action."""
        path = tree.path(leaf)
        level = tree.level_of(self.start)
        if path[level] != self.start:
            raise ValueError(f"leaf {leaf} is not below start node {self.start}")
        for v in path[level:]:
            a = Action(int(self.actions[v]))
            if a != Action.CONTINUE:
                return v, a
        return leaf, Action.STOP_AT

    def value(self, tree: EventTree, obstacle: Obstacle, g=None) -> float:
        """``E[xi_tau + sum g dt | start]`` of this rule."""
        gain = as_gain(tree, g)
        v = obstacle.at[tree.leaves].copy()
        start_level = tree.level_of(self.start)
        for k in range(tree.periods - 1, start_level - 1, -1):
            sl = tree.level_slice(k)
            cont = gain[sl] * tree.dt + np.einsum(
                "vc,vc->v", tree.child_prob[k], v.reshape(-1, tree.branching)
            )
            act = self.actions[sl]
            v = np.where(
                act == Action.STOP_AT,
                obstacle.at[sl],
                np.where(act == Action.STOP_RIGHT_AFTER, obstacle.post[sl], cont),
            )
        return float(v[self.start - tree.offset(start_level)])


def epsilon_optimal_time(
    tree: EventTree,
    Y: LadlagProcess,
    obstacle: Obstacle,
    start: int = 0,
    eps: float = 0.0,
    use_post: bool = False,
) -> StoppingRule:
    """First time at or after ``start`` with ``Y <= xi + eps``.

    At-slots are examined by default.  With ``use_post`` a miss on the
    at-slot followed by a hit on the post slot yields ``STOP_RIGHT_AFTER``.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    actions = np.where(Y.at <= obstacle.at + eps, Action.STOP_AT, Action.CONTINUE)
    if use_post:
        right = (actions == Action.CONTINUE) & (Y.post <= obstacle.post + eps)
        actions = np.where(right, Action.STOP_RIGHT_AFTER, actions)
    actions[tree.leaves] = Action.STOP_AT
    return StoppingRule(actions, start)


@dataclass(frozen=True)
class FlatOffReport:
    leaves: tuple[int, ...]
    constant: tuple[bool, ...]
    hit: tuple[bool, ...]
    worst_increment: float

    @property
    def passed(self) -> bool:
        return all(self.constant) and all(self.hit)


def check_flat_off(
    tree: EventTree,
    parts: MertensParts,
    Y: LadlagProcess,
    obstacle: Obstacle,
    rule: StoppingRule,
    eps: float = 0.0,
    tol: float = 0.0,
) -> FlatOffReport:
    """Verify ``A + C_-`` is constant on ``[S, tau]`` and ``Y_tau <= xi_tau + eps`` per path."""
    sub = tree.subtree_leaves(rule.start)
    start_level = tree.level_of(rule.start)
    leaves, constant, hit = [], [], []
    worst = 0.0
    for leaf in range(sub.start, sub.stop):
        node, action = rule.stop_node(tree, leaf)
        path = tree.path(node)[start_level:]
        charge = sum(parts.dA[v] + parts.dC[v] for v in path[:-1])
        if action == Action.STOP_RIGHT_AFTER:
            charge += parts.dC[node]
            ok = Y.post[node] <= obstacle.post[node] + eps
        else:
            ok = Y.at[node] <= obstacle.at[node] + eps
        worst = max(worst, abs(charge))
        leaves.append(leaf)
        constant.append(bool(abs(charge) <= tol))
        hit.append(bool(ok))
    return FlatOffReport(tuple(leaves), tuple(constant), tuple(hit), worst)
