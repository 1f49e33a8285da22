"""Service-area construction: demand clustering, grid baseline, adjacency.

An area is the set of map points closer to its depot than to any other
depot (ties go to the lowest area index), so storing the depots is
enough to classify any location. Depots double as the start/end points
of every route and as the drone parking spots between windows.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Point2D, ScenarioError


@dataclass
class ServiceMap:
    """Depot layout plus the neighbor structure drones act over.

    neighbor_lists[a] holds the k nearest other areas in increasing
    depot-distance order; these are the legal move targets from a, and
    their order fixes the action indexing (0 = stay, i = i-th nearest).
    adjacency is the same relation symmetrised by union, irreflexive.
    """

    depots: list[Point2D]
    kind: str  # "kmeans" or "grid"
    neighbor_lists: list[list[int]]
    adjacency: list[set[int]] = field(repr=False)

    def __post_init__(self) -> None:
        self._depot_xy = np.array([[d.x, d.y] for d in self.depots], dtype=float)

    @property
    def num_areas(self) -> int:
        return len(self.depots)

    def area_of(self, point: Point2D) -> int:
        """Index of the area containing the point (nearest depot)."""
        d2 = ((self._depot_xy - (point.x, point.y)) ** 2).sum(axis=1)
        return int(np.argmin(d2))  # argmin takes the lowest index on ties

    def areas_of(self, xy: np.ndarray) -> np.ndarray:
        """Vectorised area_of for an (n, 2) coordinate array."""
        d2 = ((xy[:, None, :] - self._depot_xy[None, :, :]) ** 2).sum(axis=2)
        return d2.argmin(axis=1)

    def action_targets(self, area: int) -> list[int]:
        """Areas reachable by each action from `area`: itself first."""
        return [area] + self.neighbor_lists[area]

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "depots": [[d.x, d.y] for d in self.depots],
            "neighbor_lists": [list(n) for n in self.neighbor_lists],
            "adjacency": [sorted(s) for s in self.adjacency],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_json_dict(cls, data: dict) -> "ServiceMap":
        return cls(
            depots=[Point2D(float(x), float(y)) for x, y in data["depots"]],
            kind=str(data["kind"]),
            neighbor_lists=[list(map(int, row)) for row in data["neighbor_lists"]],
            adjacency=[set(map(int, row)) for row in data["adjacency"]],
        )

    @classmethod
    def load(cls, path: str | Path) -> "ServiceMap":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def area_adjacency(depots: list[Point2D], k_neighbors: int) -> tuple[list[list[int]], list[set[int]]]:
    """Directed k-nearest depot lists and their symmetrised union.

    Returns (neighbor_lists, adjacency). neighbor_lists[a] is ordered by
    (distance, index) ascending and has exactly k_neighbors entries;
    adjacency[a] contains b iff a lists b or b lists a. Self-loops are
    never stored; staying put is always a legal action regardless.
    """
    n = len(depots)
    if not 0 <= k_neighbors < n:
        raise ScenarioError(f"k_neighbors must lie in [0, {n - 1}], got {k_neighbors}")
    xy = np.array([[d.x, d.y] for d in depots], dtype=float)
    neighbor_lists: list[list[int]] = []
    for a in range(n):
        d2 = ((xy - xy[a]) ** 2).sum(axis=1)
        order = sorted((float(d2[b]), b) for b in range(n) if b != a)
        neighbor_lists.append([b for _, b in order[:k_neighbors]])
    adjacency: list[set[int]] = [set() for _ in range(n)]
    for a, nbrs in enumerate(neighbor_lists):
        for b in nbrs:
            adjacency[a].add(b)
            adjacency[b].add(a)
    return neighbor_lists, adjacency


def _lloyd(points: np.ndarray, n_areas: int, rng: np.random.Generator,
           max_iter: int,
           objective_history: list[float] | None = None) -> np.ndarray:
    """Plain Lloyd iterations; returns final centres (n_areas, 2).

    objective_history, when given, receives the within-cluster sum of
    squares after every assignment step.
    """
    unique = np.unique(points, axis=0)
    if len(unique) < n_areas:
        raise ScenarioError(
            f"need at least {n_areas} distinct demand points, got {len(unique)}")
    centres = unique[rng.choice(len(unique), size=n_areas, replace=False)].astype(float)

    prev_assign: np.ndarray | None = None
    prev_wcss = math.inf
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)

        # Reseed empty clusters at the point farthest from its own centre.
        nearest = d2[np.arange(len(points)), assign]
        for c in range(n_areas):
            if not (assign == c).any():
                far = int(nearest.argmax())
                centres[c] = points[far]
                d2[:, c] = ((points - centres[c]) ** 2).sum(axis=1)
                assign = d2.argmin(axis=1)
                nearest = d2[np.arange(len(points)), assign]

        wcss = float(nearest.sum())
        if objective_history is not None:
            objective_history.append(wcss)
        # Each assignment step can only tighten the objective.
        assert wcss <= prev_wcss + 1e-6 * max(1.0, prev_wcss), \
            f"clustering objective increased: {prev_wcss} -> {wcss}"
        prev_wcss = wcss

        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        prev_assign = assign
        for c in range(n_areas):
            centres[c] = points[assign == c].mean(axis=0)
    return centres


def kmeans_segment(points: list[Point2D], n_areas: int, seed: int,
                   *, k_neighbors: int = 3, max_iter: int = 500,
                   objective_history: list[float] | None = None) -> ServiceMap:
    """Cluster historical demand locations into service areas.

    Lloyd's algorithm seeded with n_areas distinct demand points drawn
    uniformly; empty clusters are reseeded at the farthest point.
    Stops when assignments stabilise or after max_iter rounds. Depots
    sit at the final centroids, ordered by (y, x) so the area numbering
    does not depend on the draw order.
    """
    if n_areas < 1:
        raise ScenarioError("n_areas must be at least 1")
    xy = np.array([[p.x, p.y] for p in points], dtype=float)
    if xy.ndim != 2 or len(xy) == 0:
        raise ScenarioError("kmeans needs at least one demand point")
    rng = np.random.default_rng(seed)
    centres = _lloyd(xy, n_areas, rng, max_iter, objective_history)
    order = np.lexsort((centres[:, 0], centres[:, 1]))
    depots = [Point2D(float(x), float(y)) for x, y in centres[order]]
    neighbor_lists, adjacency = area_adjacency(depots, min(k_neighbors, n_areas - 1))
    return ServiceMap(depots=depots, kind="kmeans",
                      neighbor_lists=neighbor_lists, adjacency=adjacency)


def grid_segment(map_bounds: tuple[float, float], n_areas: int,
                 *, k_neighbors: int = 3) -> ServiceMap:
    """Square-grid baseline: sqrt(n) x sqrt(n) cells, depots at centres.

    n_areas must be a perfect square. Depots are numbered row-major from
    the south-west cell, which matches nearest-depot classification
    everywhere (cell boundaries tie-break to the lower index).
    """
    side = math.isqrt(n_areas)
    if side * side != n_areas:
        raise ScenarioError(f"grid segmentation needs a perfect-square area count, got {n_areas}")
    w, h = map_bounds
    if w <= 0 or h <= 0:
        raise ScenarioError("map bounds must be positive")
    cw, ch = w / side, h / side
    depots = [Point2D((col + 0.5) * cw, (row + 0.5) * ch)
              for row in range(side) for col in range(side)]
    neighbor_lists, adjacency = area_adjacency(depots, min(k_neighbors, n_areas - 1))
    return ServiceMap(depots=depots, kind="grid",
                      neighbor_lists=neighbor_lists, adjacency=adjacency)


__all__ = [
    "ServiceMap",
    "area_adjacency",
    "grid_segment",
    "kmeans_segment",
]
