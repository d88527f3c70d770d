"""Exception types raised across the package."""

from __future__ import annotations


class ScenarioError(ValueError):
    """Invalid scenario parameters (jump probabilities, mark kernels, shapes)."""


class ObstacleError(ValueError):
    """Obstacle is not right upper-semicontinuous or has non-finite values."""

    def __init__(self, message: str, violations: list[int] | None = None):
        super().__init__(message)
        self.violations = list(violations or [])


class RepresentationError(ValueError):
    """A process handed to ``represent`` is not a martingale on the tree."""

    def __init__(self, message: str, node: int, defect: float):
        super().__init__(message)
        self.node = node
        self.defect = defect


class SupermartingaleError(ValueError):
    """Mertens decomposition produced a decreasing A or C beyond tolerance."""

    def __init__(self, message: str, node: int, defect: float):
        super().__init__(message)
        self.node = node
        self.defect = defect


class ConvergenceError(RuntimeError):
    """Picard iteration hit ``max_iter`` without meeting the tolerance."""

    def __init__(self, message: str, distances: list[float]):
        super().__init__(message)
        self.distances = list(distances)

    @property
    def ratios(self) -> list[float]:
        d = self.distances
        return [d[k + 1] / d[k] if d[k] > 0 else 0.0 for k in range(len(d) - 1)]


class OracleTooLargeError(ValueError):
    """The brute-force enumeration would exceed its rule-count guard."""

    def __init__(self, message: str, count: int, guard: int):
        super().__init__(message)
        self.count = count
        self.guard = guard
