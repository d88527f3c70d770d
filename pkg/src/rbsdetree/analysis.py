"""Oracles and theorem checks: brute-force stopping, comparison, a-priori bound, Ito identity."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import OracleTooLargeError
from .martingale import MartingalePath, integrate
from .processes import LadlagProcess, h2_norm, s2_norm
from .rbsde import AffineDriver, Driver, RbsdeSolution, picard_solve, solve_frozen
from .scenario import EventTree, Obstacle
from .snell import Action, StoppingRule, as_gain, cumulate_adapted, cumulate_predictable

RULE_GUARD = 10_000


def count_rules(tree: EventTree, start: int = 0, include_post: bool = True) -> int:
    """Number of distinct stopping rules on the subtree of ``start``."""
    own = 2 if include_post else 1
    count = 1
    for _ in range(tree.periods - tree.level_of(start)):
        count = own + count**tree.branching
    return count


def rule_values(
    tree: EventTree,
    reward_at: np.ndarray,
    reward_post: np.ndarray | None,
    gain: np.ndarray,
    node: int,
) -> np.ndarray:
    """Expected reward of every stopping rule on the subtree of ``node``, unsorted.

    Each entry corresponds to one rule: stop at ``node``, stop right after it
    (when ``reward_post`` is given), or continue and combine one rule from
    every child.  No pruning is done.
    """
    kids = list(tree.children(node))
    if not kids:
        return np.array([reward_at[node]])
    combined = np.zeros(1)
    probs = tree.child_prob[tree.level_of(node)][node - tree.offset(tree.level_of(node))]
    for p, c in zip(probs, kids):
        combined = (combined[:, None] + p * rule_values(tree, reward_at, reward_post, gain, c)).ravel()
    own = [reward_at[node]] if reward_post is None else [reward_at[node], reward_post[node]]
    return np.concatenate([own, gain[node] * tree.dt + combined])


def brute_force_value(
    tree: EventTree,
    obstacle: Obstacle,
    g=None,
    start: int = 0,
    guard: int = RULE_GUARD,
) -> float:
    """Best expected reward over all enumerated stopping rules from ``start``.

    Raises:
        OracleTooLargeError: when the rule count exceeds ``guard``.
    """
    count = count_rules(tree, start, include_post=True)
    if count > guard:
        raise OracleTooLargeError(
            f"{count} stopping rules below node {start} exceed the guard {guard}", count, guard
        )
    vals = rule_values(tree, obstacle.at, obstacle.post, as_gain(tree, g), start)
    assert vals.size == count
    return float(vals.max())


def brute_force_s2(tree: EventTree, X: LadlagProcess, beta: float = 0.0, guard: int = RULE_GUARD) -> float:
    """``max_tau E[e^{beta tau} X_tau^2]`` by enumeration (at-slots only)."""
    count = count_rules(tree, 0, include_post=False)
    if count > guard:
        raise OracleTooLargeError(f"{count} stopping rules exceed the guard {guard}", count, guard)
    reward = np.exp(beta * tree.node_time) * X.at**2
    return float(rule_values(tree, reward, None, np.zeros(tree.n_interior), 0).max())


def enumerate_rules(tree: EventTree, start: int = 0, include_post: bool = True) -> Iterator[StoppingRule]:
    """Yield every stopping rule on the subtree of ``start`` as a :class:`StoppingRule`."""

    def walk(node: int) -> Iterator[dict[int, Action]]:
        kids = list(tree.children(node))
        if not kids:
            yield {node: Action.STOP_AT}
            return
        yield {node: Action.STOP_AT}
        if include_post:
            yield {node: Action.STOP_RIGHT_AFTER}
        for combo in _product([list(walk(c)) for c in kids]):
            merged = {node: Action.CONTINUE}
            for part in combo:
                merged.update(part)
            yield merged

    for assignment in walk(start):
        actions = np.full(tree.n_nodes, Action.CONTINUE, dtype=np.int8)
        for v, a in assignment.items():
            actions[v] = a
        actions[tree.leaves] = Action.STOP_AT
        yield StoppingRule(actions, start)


def _product(pools):
    if not pools:
        yield ()
        return
    for head in pools[0]:
        for tail in _product(pools[1:]):
            yield (head, *tail)


# comparison -----------------------------------------------------------------


@dataclass(frozen=True)
class RbsdeSpec:
    obstacle: Obstacle
    driver: Driver


@dataclass(frozen=True)
class ComparisonReport:
    in_hypothesis: bool
    holds: bool
    max_violation: float
    obstacle_ordered: bool
    driver_condition: str | None
    scheme_monotone: bool | None
    Y1_root: float
    Y2_root: float

    @property
    def passed(self) -> bool:
        return self.holds or not self.in_hypothesis

    def as_dict(self) -> dict:
        return {
            "in_hypothesis": self.in_hypothesis,
            "holds": self.holds,
            "max_violation": self.max_violation,
            "obstacle_ordered": self.obstacle_ordered,
            "driver_condition": self.driver_condition,
            "scheme_monotone": self.scheme_monotone,
            "Y1_root": self.Y1_root,
            "Y2_root": self.Y2_root,
        }


def _driver_gap(tree, f1: Driver, f2: Driver, sol: RbsdeSolution) -> np.ndarray:
    return f1.gain(tree, sol.Y.at, sol.Z) - f2.gain(tree, sol.Y.at, sol.Z)


def scheme_monotone(tree: EventTree, driver: Driver) -> bool | None:
    """Whether one backward step is nondecreasing in the children's values.

    For an affine driver the continuation is ``sum_c w_c Y(c)`` with
    ``w_j = p_j + dt b_j`` on marks, ``w_0 = p_0 - dt sum_j b_j`` on
    ``NoEvent``, and the implicit ``y`` coefficient needs ``a dt < 1``.
    ``None`` for drivers whose structure is unknown.
    """
    if not isinstance(driver, AffineDriver):
        return None if driver.depends_on_solution else True
    if driver.a * tree.dt >= 1.0:
        return False
    if not driver.b.size:
        return True
    probs = np.concatenate(tree.child_prob)
    w = probs.copy()
    w[:, 1:] += tree.dt * driver.b
    w[:, 0] -= tree.dt * driver.b.sum()
    return bool(np.all(w >= -1e-15))


def compare(
    tree: EventTree,
    spec1: RbsdeSpec,
    spec2: RbsdeSpec,
    order_tol: float = 1e-10,
    **solver_kwargs,
) -> ComparisonReport:
    """Solve both equations and test ``Y1 <= Y2`` at every node slot.

    The hypothesis is checked at the solved arguments: the obstacles must be
    ordered at both slots and, on the intervals where ``Y1_- > Y2_-``, either
    ``f1 - f2 <= 0`` at ``(Y1, Z1)`` or at ``(Y2, Z2)``.  Both drivers must
    also give a monotone one-step scheme.
    """
    s1 = picard_solve(tree, spec1.obstacle, spec1.driver, **solver_kwargs)
    s2 = picard_solve(tree, spec2.obstacle, spec2.driver, **solver_kwargs)
    ordered = bool(
        np.all(spec1.obstacle.at <= spec2.obstacle.at)
        and np.all(spec1.obstacle.post <= spec2.obstacle.post)
    )
    interior = slice(0, tree.n_interior)
    above = s1.Y.post[interior] > s2.Y.post[interior]
    cond = None
    for name, sol in (("first", s1), ("second", s2)):
        gap = _driver_gap(tree, spec1.driver, spec2.driver, sol)
        if np.all(gap[above] <= 1e-12):
            cond = name
            break
    mono = [scheme_monotone(tree, s.driver) for s in (spec1, spec2)]
    monotone = None if None in mono else all(mono)
    violation = max(
        float(np.max(s1.Y.at - s2.Y.at)), float(np.max(s1.Y.post - s2.Y.post))
    )
    return ComparisonReport(
        in_hypothesis=ordered and cond is not None and monotone is not False,
        holds=violation <= order_tol,
        max_violation=max(violation, 0.0),
        obstacle_ordered=ordered,
        driver_condition=cond,
        scheme_monotone=monotone,
        Y1_root=float(s1.Y.at[0]),
        Y2_root=float(s2.Y.at[0]),
    )


# a-priori estimate ------------------------------------------------------------


@dataclass(frozen=True)
class AprioriReport:
    z_distance: float
    y_distance: float
    rhs: float
    holds: bool
    y_ratio: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def gain_energy(tree: EventTree, dg: np.ndarray, beta: float) -> float:
    """``E[int_0^T e^{beta s} dg(s)^2 ds]`` for a gain piecewise constant on periods."""
    t = tree.node_level[: tree.n_interior] * tree.dt
    if beta > 0:
        weight = np.exp(beta * t) * math.expm1(beta * tree.dt) / beta
    else:
        weight = np.full(tree.n_interior, tree.dt)
    prob = np.concatenate(tree.path_prob[:-1])
    return float(np.sum(prob * weight * dg**2))


def apriori_check(
    tree: EventTree,
    obstacle: Obstacle,
    g1,
    g2,
    eps: float,
    beta: float,
    rel_tol: float = 1e-8,
) -> AprioriReport:
    """Constant-free bound ``||Z1 - Z2||^2_{H,beta} <= eps^2 E int e^{beta s} (g1 - g2)^2 ds``.

    The matching ``S^{2,beta}`` ratio for ``Y1 - Y2`` involves an unknown
    constant and is only reported.
    """
    if not beta > 1.0 / eps**2:
        raise ValueError(f"beta={beta} must exceed 1/eps^2={1.0 / eps**2}")
    a = solve_frozen(tree, obstacle, g1)
    b = solve_frozen(tree, obstacle, g2)
    dz = h2_norm(tree, a.Z - b.Z, beta)
    dy = s2_norm(tree, a.Y - b.Y, beta)
    rhs = eps**2 * gain_energy(tree, a.gain - b.gain, beta)
    ratio = dy / rhs if rhs > 0 else (0.0 if dy == 0 else math.inf)
    return AprioriReport(dz, dy, rhs, dz <= rhs * (1.0 + rel_tol), ratio)


# Gal'chouk-Lenglart identity --------------------------------------------------------


def solution_decomposition(
    tree: EventTree, sol: RbsdeSolution
) -> tuple[MartingalePath, np.ndarray, LadlagProcess]:
    """``(M, A-part, B-part)`` with ``Y = Y_0 + M + A-part + B-part``.

    The A-part collects the drift and ``-A`` (right-continuous); the B-part
    is ``-C_-`` (left-continuous, purely discontinuous).
    """
    M = integrate(tree, sol.Z)
    a_part = -cumulate_predictable(tree, sol.gain * tree.dt + sol.dA)
    C = cumulate_adapted(tree, sol.dC)
    b_part = LadlagProcess(-(C - sol.dC), -C)
    return M, a_part, b_part


def ito_identity_check(
    tree: EventTree,
    X: LadlagProcess,
    M: MartingalePath,
    a_part: np.ndarray,
    b_part: LadlagProcess,
    beta: float = 0.0,
    consistency_tol: float = 1e-9,
) -> float:
    """Largest pathwise defect of the change-of-variables formula for ``e^{beta t} X_t^2``.

    Both sides are evaluated at every at-slot and post slot.  The
    continuous-martingale bracket term is identically zero on the tree.

    Raises:
        ValueError: if ``X != X_0 + M + A + B`` somewhere, or ``B`` is not
            left-continuous with ``B_0 = 0``.
    """
    x0 = X.at[0]
    a_part = np.asarray(a_part, dtype=float)
    scale = max(1.0, float(np.max(np.abs(X.at))), float(np.max(np.abs(X.post))))
    bad_at = np.max(np.abs(X.at - (x0 + M.values + a_part + b_part.at)))
    bad_post = np.max(np.abs(X.post - (x0 + M.values + a_part + b_part.post)))
    left = np.max(np.abs(b_part.at[1:] - np.repeat(b_part.post[: tree.n_interior], tree.branching)))
    if max(bad_at, bad_post) > consistency_tol * scale or left > consistency_tol * scale:
        raise ValueError(
            f"inconsistent decomposition (at {bad_at:.3e}, post {bad_post:.3e}, left-continuity {left:.3e})"
        )
    if abs(b_part.at[0]) > consistency_tol * scale or abs(a_part[0]) > consistency_tol * scale:
        raise ValueError("A-part and B-part must start at 0")

    t = tree.node_time
    e = np.exp(beta * t)
    # per node: terms contributed at its own time (right jump) and on the way in (left jump)
    right_jump = X.post - X.at
    own = 2.0 * e * X.at * (b_part.post - b_part.at) + e * right_jump**2
    rhs_at = np.empty(tree.n_nodes)
    rhs_at[0] = x0**2
    am = M.values + a_part
    for k in range(tree.periods):
        sl, nxt = tree.level_slice(k), tree.level_slice(k + 1)
        b = tree.branching
        post = X.post[sl]
        run = rhs_at[sl] + own[sl] + post**2 * (np.exp(beta * t[nxt][0]) - e[sl])
        e_next = e[nxt]
        left_jump = X.at[nxt] - np.repeat(post, b)
        d_am = am[nxt] - np.repeat(am[sl], b)
        rhs_at[nxt] = (
            np.repeat(run, b)
            + 2.0 * e_next * np.repeat(post, b) * d_am
            + e_next * left_jump**2
        )
    rhs_post = rhs_at + own
    lhs_at = e * X.at**2
    lhs_post = e * X.post**2
    return float(max(np.max(np.abs(lhs_at - rhs_at)), np.max(np.abs(lhs_post - rhs_post))))
