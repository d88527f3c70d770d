"""Finite scenario trees carrying a discrete marked point process.

Every period ``i`` (from ``t_{i-1}`` to ``t_i = i*T/n``) a node branches into
``m + 1`` children: a ``NoEvent`` child with probability ``1 - dK_i`` and one
child per mark ``u_j`` with probability ``dK_i * phi_i(u_j)``.  The compensator
of the point measure is therefore ``nu({t_i} x {u_j}) = dK_i * phi_i(u_j)`` and
``K_{t_i}`` is the running sum of ``dK`` along the path.

Nodes are stored level by level in a flat array.  Node ``k`` of level ``i``
has flat index ``offset[i] + k`` and its children are ``k*(m+1) + j`` on
level ``i + 1`` (``j = 0`` is ``NoEvent``, ``j >= 1`` is mark ``j - 1``), so
a per-level slice reshaped to ``(N_i, m + 1)`` groups siblings together.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ObstacleError, ScenarioError

KERNEL_TOL = 1e-12
NO_EVENT = -1


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ScenarioSpec:
    """Parameters of a scenario tree.

    ``event_prob`` and ``mark_kernel`` are normalised on construction to one
    entry per period.  Each entry is either homogeneous over the level
    (a float, resp. an ``(m,)`` vector) or a per-node table of shape
    ``(N_{i-1},)``, resp. ``(N_{i-1}, m)``, over the parent level.
    """

    horizon: float
    periods: int
    marks: tuple[str, ...]
    event_prob: tuple = field(default=())
    mark_kernel: tuple = field(default=())
    seed: int = 0

    def __post_init__(self):
        if not self.periods >= 1 or int(self.periods) != self.periods:
            raise ScenarioError(f"periods must be a positive integer, got {self.periods!r}")
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise ScenarioError(f"horizon must be positive, got {self.horizon!r}")
        marks = tuple(str(u) for u in self.marks)
        if not marks:
            raise ScenarioError("at least one mark is required")
        if len(set(marks)) != len(marks):
            raise ScenarioError(f"duplicate marks in {marks}")
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "periods", int(self.periods))
        object.__setattr__(self, "event_prob", self._per_period(self.event_prob, "event_prob", 0))
        object.__setattr__(self, "mark_kernel", self._per_period(self.mark_kernel, "mark_kernel", 1))

    def _per_period(self, value, name: str, base_ndim: int) -> tuple:
        n = self.periods
        if isinstance(value, (int, float, np.floating)) or (
            isinstance(value, np.ndarray) and value.ndim == base_ndim
        ):
            return tuple(np.array(value, dtype=float) for _ in range(n))
        if base_ndim == 1 and len(value) > 0 and np.isscalar(value[0]):
            # a bare kernel vector shared by every period
            return tuple(np.array(value, dtype=float) for _ in range(n))
        if len(value) != n:
            raise ScenarioError(f"{name} needs {n} per-period entries, got {len(value)}")
        return tuple(np.array(v, dtype=float) for v in value)

    @property
    def n_marks(self) -> int:
        return len(self.marks)


@dataclass(frozen=True, eq=False)
class EventTree:
    """Immutable scenario tree with its compensator tables.

    Attributes:
        horizon, periods, marks: as in :class:`ScenarioSpec`.
        jump: per parent level ``k``, ``dK_{k+1}`` at each level-``k`` node.
        kernel: per parent level ``k``, ``phi_{k+1}`` of shape ``(N_k, m)``.
        child_prob: per parent level ``k``, shape ``(N_k, m + 1)``.
        path_prob: per level, unconditional probability of each node.
        compensator: per level, ``K_{t_i}`` at each node.
    """

    horizon: float
    periods: int
    marks: tuple[str, ...]
    jump: tuple[np.ndarray, ...]
    kernel: tuple[np.ndarray, ...]
    child_prob: tuple[np.ndarray, ...]
    path_prob: tuple[np.ndarray, ...]
    compensator: tuple[np.ndarray, ...]
    seed: int = 0

    @property
    def n_marks(self) -> int:
        return len(self.marks)

    @property
    def branching(self) -> int:
        return len(self.marks) + 1

    @property
    def dt(self) -> float:
        return self.horizon / self.periods

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.periods + 1) * self.dt

    def level_size(self, level: int) -> int:
        return self.branching**level

    def offset(self, level: int) -> int:
        b = self.branching
        return (b**level - 1) // (b - 1)

    def level_slice(self, level: int) -> slice:
        start = self.offset(level)
        return slice(start, start + self.level_size(level))

    @property
    def n_nodes(self) -> int:
        return self.offset(self.periods + 1)

    @property
    def n_interior(self) -> int:
        """Number of non-leaf nodes; interior flat indices are ``0..n_interior-1``."""
        return self.offset(self.periods)

    @property
    def n_leaves(self) -> int:
        return self.level_size(self.periods)

    @property
    def leaves(self) -> slice:
        return self.level_slice(self.periods)

    def node(self, level: int, k: int) -> int:
        if not 0 <= level <= self.periods or not 0 <= k < self.level_size(level):
            raise IndexError(f"no node ({level}, {k})")
        return self.offset(level) + k

    def level_of(self, node: int) -> int:
        if not 0 <= node < self.n_nodes:
            raise IndexError(f"node {node} out of range")
        level = 0
        while self.offset(level + 1) <= node:
            level += 1
        return level

    def position(self, node: int) -> tuple[int, int]:
        level = self.level_of(node)
        return level, node - self.offset(level)

    def parent(self, node: int) -> int | None:
        level, k = self.position(node)
        if level == 0:
            return None
        return self.offset(level - 1) + k // self.branching

    def children(self, node: int) -> range:
        level, k = self.position(node)
        if level == self.periods:
            return range(0)
        start = self.offset(level + 1) + k * self.branching
        return range(start, start + self.branching)

    def branch(self, node: int) -> int:
        """Mark index of the branch leading to ``node`` (``NO_EVENT`` for none/root)."""
        level, k = self.position(node)
        if level == 0:
            return NO_EVENT
        return k % self.branching - 1

    def branch_label(self, node: int) -> str:
        j = self.branch(node)
        return "NoEvent" if j == NO_EVENT else self.marks[j]

    def path(self, node: int) -> list[int]:
        """Flat indices from the root down to ``node``."""
        out = [node]
        while (p := self.parent(out[-1])) is not None:
            out.append(p)
        return out[::-1]

    def subtree_leaves(self, node: int) -> slice:
        level, k = self.position(node)
        width = self.branching ** (self.periods - level)
        start = self.offset(self.periods) + k * width
        return slice(start, start + width)

    def flat(self, per_level: Sequence[np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(v, dtype=float) for v in per_level])

    # flat per-node views -------------------------------------------------

    @property
    def node_level(self) -> np.ndarray:
        return np.concatenate(
            [np.full(self.level_size(i), i) for i in range(self.periods + 1)]
        )

    @property
    def node_time(self) -> np.ndarray:
        return self.node_level * self.dt

    @property
    def node_prob(self) -> np.ndarray:
        return self.flat(self.path_prob)

    @property
    def node_branch(self) -> np.ndarray:
        out = [np.array([NO_EVENT])]
        b = self.branching
        for i in range(1, self.periods + 1):
            out.append(np.arange(self.level_size(i)) % b - 1)
        return np.concatenate(out)

    @property
    def event_count(self) -> np.ndarray:
        """Number of events (mark branches) on the path to each node."""
        counts = [np.zeros(1, dtype=int)]
        b = self.branching
        for i in range(1, self.periods + 1):
            prev = np.repeat(counts[-1], b)
            counts.append(prev + (np.arange(self.level_size(i)) % b != 0))
        return np.concatenate(counts)

    def compensator_table(self, level: int) -> np.ndarray:
        """``nu({t_{level+1}} x {u_j})`` for every level-``level`` node, shape ``(N, m)``."""
        return self.jump[level][:, None] * self.kernel[level]

    def child_probs_flat(self) -> np.ndarray:
        """Conditional probability of reaching each node from its parent (root: 1)."""
        return np.concatenate([[1.0]] + [p.ravel() for p in self.child_prob])


def build_tree(spec: ScenarioSpec) -> EventTree:
    """Expand ``spec`` into an :class:`EventTree` with compensator tables."""
    n, m = spec.periods, spec.n_marks
    b = m + 1
    jumps, kernels, child_probs, path_probs, comps = [], [], [], [], []
    path_probs.append(np.ones(1))
    comps.append(np.zeros(1))
    for k in range(n):
        size = b**k
        period = k + 1
        dk = np.broadcast_to(np.asarray(spec.event_prob[k], dtype=float), (size,)).copy()
        if dk.shape != (size,):
            raise ScenarioError(f"event_prob for period {period} has wrong shape")
        if not np.all(np.isfinite(dk)) or np.any(dk < 0.0) or np.any(dk > 1.0):
            bad = dk[(~np.isfinite(dk)) | (dk < 0) | (dk > 1)][0]
            raise ScenarioError(f"event_prob for period {period} is {bad}, outside [0, 1]")
        phi_in = np.asarray(spec.mark_kernel[k], dtype=float)
        if phi_in.shape not in ((m,), (size, m)):
            raise ScenarioError(
                f"mark_kernel for period {period} has shape {phi_in.shape}, "
                f"expected ({m},) or ({size}, {m})"
            )
        phi = np.broadcast_to(phi_in, (size, m)).copy()
        if not np.all(np.isfinite(phi)) or np.any(phi < 0):
            raise ScenarioError(f"mark_kernel for period {period} has negative or non-finite entries")
        sums = phi.sum(axis=1)
        worst = int(np.argmax(np.abs(sums - 1.0)))
        if abs(sums[worst] - 1.0) > KERNEL_TOL:
            raise ScenarioError(
                f"mark_kernel for period {period} sums to {sums[worst]:.12g}, not 1"
            )
        probs = np.empty((size, b))
        probs[:, 0] = 1.0 - dk
        probs[:, 1:] = dk[:, None] * phi
        jumps.append(_readonly(dk))
        kernels.append(_readonly(phi))
        child_probs.append(_readonly(probs))
        path_probs.append((path_probs[-1][:, None] * probs).ravel())
        comps.append(np.repeat(comps[-1] + dk, b))
    return EventTree(
        horizon=float(spec.horizon),
        periods=n,
        marks=spec.marks,
        jump=tuple(jumps),
        kernel=tuple(kernels),
        child_prob=tuple(child_probs),
        path_prob=tuple(_readonly(p) for p in path_probs),
        compensator=tuple(_readonly(c) for c in comps),
        seed=spec.seed,
    )


@dataclass(frozen=True, eq=False)
class Obstacle:
    """Lower barrier with an at-value and a post (right-limit) value per node.

    On leaves the post value is the terminal value itself.  The left limit of
    the obstacle at a node is its parent's post value.
    """

    at: np.ndarray
    post: np.ndarray

    def __post_init__(self):
        at = np.array(self.at, dtype=float)
        post = np.array(self.post, dtype=float)
        if at.shape != post.shape or at.ndim != 1:
            raise ObstacleError("obstacle at/post must be flat arrays of equal length")
        object.__setattr__(self, "at", _readonly(at))
        object.__setattr__(self, "post", _readonly(post))

    @classmethod
    def from_arrays(cls, tree: EventTree, at, post=None) -> "Obstacle":
        at = np.array(at, dtype=float)
        post = at.copy() if post is None else np.array(post, dtype=float)
        if at.shape != (tree.n_nodes,) or post.shape != (tree.n_nodes,):
            raise ObstacleError(f"obstacle needs {tree.n_nodes} node values")
        post[tree.leaves] = at[tree.leaves]
        return cls(at, post)

    @classmethod
    def constant(cls, tree: EventTree, value: float) -> "Obstacle":
        return cls.from_arrays(tree, np.full(tree.n_nodes, float(value)))

    @classmethod
    def terminal(cls, tree: EventTree, terminal, interior: float = 0.0) -> "Obstacle":
        """Obstacle equal to ``interior`` before ``T`` and ``terminal`` on leaves."""
        at = np.full(tree.n_nodes, float(interior))
        at[tree.leaves] = np.asarray(terminal, dtype=float)
        return cls.from_arrays(tree, at)

    def with_right_jump(self, tree: EventTree, node: int, post_value: float) -> "Obstacle":
        post = self.post.copy()
        post[node] = post_value
        return Obstacle.from_arrays(tree, self.at, post)


@dataclass(frozen=True)
class ObstacleReport:
    valid: bool
    violations: tuple[int, ...]
    nonfinite: tuple[int, ...]

    def raise_if_invalid(self) -> None:
        if not self.valid:
            bad = self.violations or self.nonfinite
            raise ObstacleError(
                f"obstacle rejected: {len(self.violations)} r.u.s.c. violations, "
                f"{len(self.nonfinite)} non-finite values (first node {bad[0]})",
                list(self.violations),
            )


def validate_obstacle(tree: EventTree, obs: Obstacle) -> ObstacleReport:
    """Check that ``at >= post`` at every node and that all values are finite."""
    if obs.at.shape != (tree.n_nodes,):
        raise ObstacleError(f"obstacle has {obs.at.size} values, tree has {tree.n_nodes} nodes")
    finite = np.isfinite(obs.at) & np.isfinite(obs.post)
    nonfinite = tuple(int(i) for i in np.flatnonzero(~finite))
    violations = tuple(int(i) for i in np.flatnonzero(finite & (obs.at < obs.post)))
    return ObstacleReport(not violations and not nonfinite, violations, nonfinite)


# randomized generators ---------------------------------------------------


def random_spec(
    rng: np.random.Generator,
    max_periods: int = 4,
    max_marks: int = 2,
    dt_range: tuple[float, float] = (0.02, 0.1),
    per_node: bool = False,
    shapes: Sequence[tuple[int, int]] | None = None,
) -> ScenarioSpec:
    """Draw a random scenario.

    The horizon is ``n * dt`` with ``dt`` uniform in ``dt_range``.  With
    ``per_node`` the jump probabilities and kernels vary across nodes of a
    level.  ``shapes`` restricts ``(periods, marks)`` to the listed pairs.
    """
    if shapes:
        n, m = shapes[rng.integers(len(shapes))]
    else:
        n = int(rng.integers(1, max_periods + 1))
        m = int(rng.integers(1, max_marks + 1))
    dt = rng.uniform(*dt_range)
    event_prob, kernel = [], []
    for k in range(n):
        size = (m + 1) ** k if per_node else None
        shape = () if size is None else (size,)
        event_prob.append(rng.uniform(0.05, 0.95, size=shape))
        raw = rng.uniform(0.1, 1.0, size=(m,) if size is None else (size, m))
        kernel.append(raw / raw.sum(axis=-1, keepdims=True))
    return ScenarioSpec(
        horizon=n * dt,
        periods=n,
        marks=tuple("abcdefgh"[:m]),
        event_prob=tuple(event_prob),
        mark_kernel=tuple(kernel),
        seed=int(rng.integers(2**31)),
    )


def random_obstacle(
    tree: EventTree,
    rng: np.random.Generator,
    right_jump_prob: float = 0.3,
    scale: float = 1.0,
) -> Obstacle:
    """Random r.u.s.c. obstacle: ``post = at - |noise|`` at a random subset of nodes."""
    at = rng.normal(0.0, scale, size=tree.n_nodes)
    drop = rng.uniform(0.0, scale, size=tree.n_nodes)
    drop *= rng.uniform(size=tree.n_nodes) < right_jump_prob
    return Obstacle.from_arrays(tree, at, at - drop)
