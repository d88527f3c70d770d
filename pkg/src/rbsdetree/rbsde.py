"""Reflected BSDE solver on a scenario tree.

For a gain that does not depend on the solution the equation is solved by
``solve_frozen``: Snell envelope, Mertens decomposition, then martingale
representation.  A Lipschitz driver ``f(t, y, z)`` is handled by Picard
iteration of the frozen solver in the weighted ``S^{2,beta} x H^{2,beta}``
distance.  On the interval ``(t_i, t_{i+1}]`` the driver sees the at-value
of ``y`` at the level-``i`` node and the integrand of period ``i + 1``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConvergenceError
from .martingale import MartingalePath, branch_increments, integrate, represent
from .processes import LadlagProcess, PredictableField, h2_norm, s2_norm
from .scenario import EventTree, Obstacle
from .snell import as_gain, cumulate_adapted, cumulate_predictable, mertens_decompose, snell_envelope

log = logging.getLogger(__name__)

MAX_EXPONENT = 700.0
# relative change treated as rounding noise by the Picard stopping rule
FLOAT_FLOOR = 8.0 * np.finfo(float).eps


class Driver:
    """Base driver: ``evaluate(t, y, z, jump, kernel)`` vectorised over one tree level.

    ``y`` has shape ``(N,)``, ``z`` and ``kernel`` shape ``(N, m)``, ``jump``
    shape ``(N,)``.  Subclasses return the gain rate per node.
    """

    depends_on_solution = True

    def __init__(self, lipschitz: float = 0.0):
        if lipschitz < 0:
            raise ValueError("Lipschitz constant must be nonnegative")
        self.declared_lipschitz = float(lipschitz)

    def evaluate(self, t, y, z, jump, kernel) -> np.ndarray:
        raise NotImplementedError

    def lipschitz(self, tree: EventTree) -> float:
        return self.declared_lipschitz

    def gain(self, tree: EventTree, y_at: np.ndarray, Z: PredictableField) -> np.ndarray:
        """Gain rate at every interior node for the given ``(y, Z)``."""
        out = np.empty(tree.n_interior)
        for k in range(tree.periods):
            sl = tree.level_slice(k)
            out[sl] = self.evaluate(
                k * tree.dt, y_at[sl], Z.values[sl], tree.jump[k], tree.kernel[k]
            )
        return out


class FunctionDriver(Driver):
    """User driver wrapping a vectorised callable with a declared Lipschitz constant."""

    def __init__(self, func: Callable, lipschitz: float):
        super().__init__(lipschitz)
        self.func = func

    def evaluate(self, t, y, z, jump, kernel):
        return np.broadcast_to(np.asarray(self.func(t, y, z, jump, kernel), dtype=float), y.shape)


class FrozenDriver(Driver):
    """Gain fixed in advance, one rate per interior node (or a scalar)."""

    depends_on_solution = False

    def __init__(self, g):
        super().__init__(0.0)
        self.g = g

    def gain(self, tree, y_at=None, Z=None):
        return as_gain(tree, self.g)

    def evaluate(self, t, y, z, jump, kernel):
        raise TypeError("a frozen driver is defined per node; use gain()")


class AffineDriver(Driver):
    """``f(t, y, z) = a y + sum_j b_j z(u_j) + g0(t)``."""

    def __init__(self, a: float = 0.0, b=(), g0: float | Callable[[float], float] = 0.0):
        super().__init__(0.0)
        self.a = float(a)
        self.b = np.asarray(b, dtype=float)
        self.g0 = g0

    @property
    def depends_on_solution(self) -> bool:
        return self.a != 0.0 or bool(np.any(self.b != 0.0))

    def _g0(self, t: float) -> float:
        return float(self.g0(t)) if callable(self.g0) else float(self.g0)

    def evaluate(self, t, y, z, jump, kernel):
        out = self.a * y + self._g0(t)
        if self.b.size:
            out = out + z @ self.b
        return out

    def z_lipschitz_per_node(self, tree: EventTree) -> np.ndarray:
        """Best constant ``c`` with ``|b . d| <= c ||d||`` at each interior node.

        The norm is ``d' (diag(phi) - dK phi phi') d``, whose inverse form is
        ``diag(1/phi) + dK/(1 - dK) 11'``.
        """
        if not self.b.size or not np.any(self.b):
            return np.zeros(tree.n_interior)
        phi = np.concatenate(tree.kernel)
        jump = np.concatenate(tree.jump)
        b = np.broadcast_to(self.b, phi.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            spread = np.where(phi > 0, b**2 / phi, np.where(b != 0, np.inf, 0.0)).sum(axis=1)
            total = b.sum(axis=1)
            mean = np.where(
                jump < 1.0, jump / (1.0 - jump) * total**2, np.where(total != 0, np.inf, 0.0)
            )
        return np.sqrt(spread + mean)

    def lipschitz(self, tree: EventTree) -> float:
        lz = self.z_lipschitz_per_node(tree)
        return float(max(abs(self.a), lz.max() if lz.size else 0.0))


@dataclass(frozen=True, eq=False)
class RbsdeSolution:
    """Solution quadruple ``(Y, Z, A, C)`` with diagnostics.

    ``A`` and ``C`` are stored through their jumps: ``dA`` at the level-``i``
    node for the jump at ``t_{i+1}``, and ``dC`` at each node for the right
    jump ``C_{t_i} - C_{t_i-}``.
    """

    tree: EventTree
    obstacle: Obstacle
    Y: LadlagProcess
    Z: PredictableField
    dA: np.ndarray
    dC: np.ndarray
    gain: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def A(self) -> np.ndarray:
        return cumulate_predictable(self.tree, self.dA)

    @property
    def C(self) -> np.ndarray:
        return cumulate_adapted(self.tree, self.dC)

    @property
    def M(self) -> MartingalePath:
        return integrate(self.tree, self.Z)


def solve_frozen(tree: EventTree, obstacle: Obstacle, g=None) -> RbsdeSolution:
    """Solve the reflected equation for a gain rate that ignores ``(y, z)``."""
    gain = as_gain(tree, g)
    Y = snell_envelope(tree, obstacle, gain)
    parts = mertens_decompose(tree, Y, gain)
    Z = represent(tree, parts.M)
    return RbsdeSolution(tree, obstacle, Y, Z, parts.dA, parts.dC, gain)


@dataclass(frozen=True)
class PicardParameters:
    beta: float
    eps: float
    tol: float
    max_iter: int
    defaults: dict

    def as_dict(self) -> dict:
        return {
            "beta": self.beta,
            "eps": self.eps,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "defaults": dict(self.defaults),
        }


def default_eps(L: float, horizon: float) -> float:
    """``eps^2 = 1 / (16 max(L, 1)^2 (T + 1))``."""
    return 1.0 / math.sqrt(16.0 * max(L, 1.0) ** 2 * (horizon + 1.0))


def picard_parameters(
    tree: EventTree,
    driver: Driver,
    beta: float | None = None,
    eps: float | None = None,
    tol: float | None = None,
    max_iter: int | None = None,
) -> PicardParameters:
    L = driver.lipschitz(tree)
    defaults = {
        "eps": eps is None,
        "beta": beta is None,
        "tol": tol is None,
        "max_iter": max_iter is None,
    }
    if eps is None:
        eps = default_eps(L, tree.horizon) if math.isfinite(L) else 1e-3
    if eps <= 0:
        raise ValueError("eps must be positive")
    if beta is None:
        beta = 1.0 / eps**2
    tol = 1e-10 if tol is None else tol
    max_iter = 200 if max_iter is None else max_iter
    if beta < 1.0 / eps**2 * (1.0 - 1e-12):
        raise ValueError(f"beta={beta} is below 1/eps^2={1.0 / eps**2}")
    if beta * tree.horizon > MAX_EXPONENT:
        raise ValueError(f"beta*T={beta * tree.horizon:.1f} overflows the weighted norms")
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter at least 1")
    return PicardParameters(float(beta), float(eps), float(tol), int(max_iter), defaults)


def _initial_point(tree: EventTree, obstacle: Obstacle, init):
    if init is None or init == "zero":
        return np.zeros(tree.n_nodes), PredictableField.zeros(tree)
    if init == "obstacle":
        return obstacle.at.copy(), PredictableField.zeros(tree)
    y, z = init
    y_at = y.at if isinstance(y, LadlagProcess) else np.asarray(y, dtype=float)
    z = z if isinstance(z, PredictableField) else PredictableField(z)
    return np.array(y_at, dtype=float), z


def picard_solve(
    tree: EventTree,
    obstacle: Obstacle,
    driver: Driver,
    beta: float | None = None,
    eps: float | None = None,
    tol: float | None = None,
    max_iter: int | None = None,
    init=None,
) -> RbsdeSolution:
    """Fixed point of ``(y, z) -> solve_frozen(f(., y, z))``.

    Iterates until ``|||dY|||^2_{S,beta} + ||dZ||^2_{H,beta} < tol^2``.  The
    ``e^{beta T}`` weight can put ``tol^2`` below what floating point
    resolves, so the loop also stops once the distance is no larger than
    that of a ``FLOAT_FLOOR`` relative change at every node, or once no node
    moves by more than that.  Below this level the distance history is
    rounding noise and is no longer monotone.
    ``init`` is ``None``/``"zero"``, ``"obstacle"`` or a ``(y, z)`` pair.

    Raises:
        ConvergenceError: after ``max_iter`` iterations without convergence.
    """
    params = picard_parameters(tree, driver, beta, eps, tol, max_iter)
    y_at, z = _initial_point(tree, obstacle, init)
    distances: list[float] = []
    for it in range(1, params.max_iter + 1):
        gain = driver.gain(tree, y_at, z)
        sol = solve_frozen(tree, obstacle, gain)
        dist = s2_norm(tree, LadlagProcess(sol.Y.at - y_at, sol.Y.post * 0.0), params.beta)
        dist += h2_norm(tree, sol.Z - z, params.beta)
        distances.append(dist)
        log.debug("picard iteration %d: distance %.3e", it, dist)
        floor = dist <= _rounding_floor(tree, sol, params.beta) or (
            _float_fixed_point(sol.Y.at, y_at) and _float_fixed_point(sol.Z.values, z.values)
        )
        # a gain that ignores (y, z) makes the map constant: one step is the fixed point
        if dist < params.tol**2 or floor or not driver.depends_on_solution:
            diagnostics = {
                "stopped_at_float_floor": bool(
                    floor and dist >= params.tol**2 and driver.depends_on_solution
                ),
                "iterations": it,
                "distances": distances,
                "ratios": _ratios(distances),
                "final_ratio": _ratios(distances)[-1] if len(distances) > 1 else None,
                "lipschitz": driver.lipschitz(tree),
                **params.as_dict(),
            }
            return RbsdeSolution(
                tree, obstacle, sol.Y, sol.Z, sol.dA, sol.dC, sol.gain, diagnostics
            )
        y_at, z = sol.Y.at, sol.Z
    raise ConvergenceError(
        f"Picard iteration did not reach tol={params.tol:g} in {params.max_iter} iterations",
        distances,
    )


def _rounding_floor(tree: EventTree, sol: RbsdeSolution, beta: float) -> float:
    """Weighted distance of a ``FLOAT_FLOOR`` relative change at every node and period."""
    scale = max(1.0, float(np.max(np.abs(sol.Y.at))), float(np.max(np.abs(sol.Z.values), initial=0.0)))
    weights = math.exp(beta * tree.horizon) + float(np.sum(np.exp(beta * tree.times[1:])))
    return (FLOAT_FLOOR * scale) ** 2 * weights


def _float_fixed_point(new: np.ndarray, old: np.ndarray) -> bool:
    if not new.size:
        return True
    scale = max(1.0, float(np.max(np.abs(new))))
    return bool(np.max(np.abs(new - old)) <= FLOAT_FLOOR * scale)


def _ratios(d: list[float]) -> list[float]:
    return [d[k + 1] / d[k] if d[k] > 0 else 0.0 for k in range(len(d) - 1)]


def residual(
    tree: EventTree,
    sol: RbsdeSolution,
    driver: Driver,
    obstacle: Obstacle | None = None,
) -> np.ndarray:
    """Defect of the one-step backward identity at every node.

    Interior node: largest, over children of positive probability, of
    ``|Y(v) - Y(c) - f dt + dM_c - dA(v) - dC(v)|``.  Leaf: ``|Y_T - xi_T|``.
    """
    obstacle = sol.obstacle if obstacle is None else obstacle
    out = np.empty(tree.n_nodes)
    leaves = tree.leaves
    out[leaves] = np.abs(sol.Y.at[leaves] - obstacle.at[leaves])
    gain = driver.gain(tree, sol.Y.at, sol.Z)
    dM = branch_increments(tree, sol.Z)
    probs = np.concatenate(tree.child_prob)
    kids = sol.Y.at[1:].reshape(tree.n_interior, tree.branching)
    here = sol.Y.at[: tree.n_interior, None]
    rhs = kids + (gain * tree.dt + sol.dA + sol.dC[: tree.n_interior])[:, None] - dM
    defect = np.where(probs > 0, np.abs(here - rhs), 0.0)
    out[: tree.n_interior] = defect.max(axis=1)
    return out


@dataclass(frozen=True)
class CheckResult:
    passed: bool
    worst: float
    detail: str = ""


@dataclass(frozen=True)
class VerificationReport:
    checks: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def as_dict(self) -> dict:
        return {
            name: {"passed": c.passed, "worst": c.worst, "detail": c.detail}
            for name, c in self.checks.items()
        }


def reconstruction_defects(
    tree: EventTree,
    sol: RbsdeSolution,
    obstacle: Obstacle,
    gain: np.ndarray,
) -> tuple[float, float]:
    """Worst pathwise defect of the integrated equation at at-slots and post slots.

    With ``F = int g - M + A + C_-`` the equation says that ``Y + F`` at any
    node (``Y_+ + F + dC`` at a post slot) equals ``xi_T + F_T`` on every
    path of positive probability through it.
    """
    A = cumulate_predictable(tree, sol.dA)
    C = cumulate_adapted(tree, sol.dC)
    drift = cumulate_predictable(tree, gain * tree.dt)
    F = drift - integrate(tree, sol.Z).values + A + (C - sol.dC)
    target = obstacle.at[tree.leaves] + F[tree.leaves]
    alive = tree.path_prob[-1] > 0
    worst_at = worst_post = 0.0
    for k in range(tree.periods + 1):
        sl = tree.level_slice(k)
        block = target.reshape(tree.level_size(k), -1)
        mask = alive.reshape(tree.level_size(k), -1)
        g_at = (sol.Y.at[sl] + F[sl])[:, None]
        g_post = (sol.Y.post[sl] + F[sl] + sol.dC[sl])[:, None]
        worst_at = max(worst_at, float(np.max(np.where(mask, np.abs(g_at - block), 0.0))))
        worst_post = max(worst_post, float(np.max(np.where(mask, np.abs(g_post - block), 0.0))))
    return worst_at, worst_post


def verify_solution(
    tree: EventTree,
    sol: RbsdeSolution,
    obstacle: Obstacle,
    driver: Driver,
    tol: float = 1e-9,
) -> VerificationReport:
    """Check every condition of the solution definition, reporting worst residuals.

    ``reconstruction``: integrated equation along all paths plus the one-step
    residual, within ``tol``.  ``domination``: ``Y >= xi`` at both slots,
    exactly.  ``A``: nondecreasing, predictable placement, and
    ``dA > 0 => Y_- = xi_-``, exactly.  ``C``: nondecreasing,
    ``dC = Y - Y_+`` within 1e-12, and ``dC > 0 => Y = xi``, exactly.
    """
    gain = driver.gain(tree, sol.Y.at, sol.Z)
    w_at, w_post = reconstruction_defects(tree, sol, obstacle, gain)
    w_step = float(residual(tree, sol, driver, obstacle).max())
    worst = max(w_at, w_post, w_step)
    checks = {
        "reconstruction": CheckResult(
            worst < tol, worst, f"at={w_at:.3e} post={w_post:.3e} step={w_step:.3e}"
        )
    }

    gap = max(float(np.max(obstacle.at - sol.Y.at)), float(np.max(obstacle.post - sol.Y.post)))
    checks["domination"] = CheckResult(gap <= 0.0, max(gap, 0.0))

    dA = sol.dA
    neg_a = float(max(0.0, -dA.min())) if dA.size else 0.0
    interior = slice(0, tree.n_interior)
    charged = dA > 0
    skor = np.abs(sol.Y.post[interior] - obstacle.post[interior])[charged]
    skor_worst = float(skor.max()) if skor.size else 0.0
    predictable = _predictable_ok(tree, sol)
    checks["A"] = CheckResult(
        neg_a == 0.0 and skor_worst == 0.0 and predictable,
        max(neg_a, skor_worst),
        f"negative={neg_a:.3e} skorokhod={skor_worst:.3e} predictable={predictable}",
    )

    dC = sol.dC
    neg_c = float(max(0.0, -dC.min()))
    jump_gap = float(np.max(np.abs(dC - (sol.Y.at - sol.Y.post))))
    minimal = np.abs(sol.Y.at - obstacle.at)[dC > 0]
    min_worst = float(minimal.max()) if minimal.size else 0.0
    checks["C"] = CheckResult(
        neg_c == 0.0 and jump_gap <= 1e-12 and min_worst == 0.0,
        max(neg_c, jump_gap, min_worst),
        f"negative={neg_c:.3e} jump={jump_gap:.3e} minimality={min_worst:.3e}",
    )
    return VerificationReport(checks)


def _predictable_ok(tree: EventTree, sol: RbsdeSolution) -> bool:
    # A at siblings must agree: its jump at t_{i+1} is fixed by the parent
    A = sol.A
    sib = A[1:].reshape(tree.n_interior, tree.branching)
    return bool(np.all(sib == sib[:, :1])) and sol.dA.shape == (tree.n_interior,)
