"""Costmap construction, Gaussian smoothing, and A* route search.

Semantic classes map to traversal costs (pedestrian surfaces cheap, road
and unlabeled ground expensive, obstacles impassable). Smoothing biases
the search toward corridor centers; A* runs 8-connected with step cost =
Euclidean step length x mean endpoint cost and an admissible
Euclidean-times-cheapest-cell heuristic.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .annotate import SurfaceClass
from .errors import InvalidEndpoint, MissingClassCost, NoPath

#: traversal cost per class; OBSTACLE is impassable
DEFAULT_COST_TABLE = {
    SurfaceClass.PEDESTRIAN: 1.0,
    SurfaceClass.CROSSING: 5.0,
    SurfaceClass.ROAD: 100.0,
    SurfaceClass.UNKNOWN: 100.0,
    SurfaceClass.OBSTACLE: math.inf,
}

_STEPS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass
class Costmap:
    """Per-cell traversal cost aligned with a surface map grid."""

    costs: np.ndarray  # (H, W); impassable cells carry +inf
    origin_x: float = 0.0
    origin_y: float = 0.0
    resolution: float = 1.0

    def __post_init__(self):
        self.costs = np.asarray(self.costs, dtype=np.float64)
        if self.costs.ndim != 2:
            raise ValueError("costmap must be 2-D")
        finite = self.costs[np.isfinite(self.costs)]
        if len(finite) and np.any(finite < 0):
            raise ValueError("costs must be >= 0")

    @property
    def height(self) -> int:
        return self.costs.shape[0]

    @property
    def width(self) -> int:
        return self.costs.shape[1]

    @property
    def passable(self) -> np.ndarray:
        return np.isfinite(self.costs)

    def world_to_cell(self, x: float, y: float):
        i = int(math.floor((x - self.origin_x) / self.resolution))
        j = int(math.floor((y - self.origin_y) / self.resolution))
        return i, j

    def cell_center(self, i: int, j: int):
        return (
            self.origin_x + (i + 0.5) * self.resolution,
            self.origin_y + (j + 0.5) * self.resolution,
        )


@dataclass
class Path:
    """A* result: 8-connected cell chain and its total cost."""

    cells: list  # [(i, j), ...] from start to goal
    total_cost: float


def map_to_costmap(classes: np.ndarray, cost_table=None, origin_x: float = 0.0,
                   origin_y: float = 0.0, resolution: float = 1.0) -> Costmap:
    """Per-cell cost lookup from the class raster."""
    if cost_table is None:
        cost_table = DEFAULT_COST_TABLE
    missing = [c for c in SurfaceClass if c not in cost_table]
    if missing:
        raise MissingClassCost(f"cost table lacks {[c.name for c in missing]}")
    classes = np.asarray(classes)
    lut = np.array([cost_table[SurfaceClass(k)] for k in range(len(SurfaceClass))])
    return Costmap(lut[classes.astype(int)], origin_x, origin_y, resolution)


def gaussian_smooth(cm: Costmap, sigma_cells: float) -> Costmap:
    """Separable Gaussian blur with reflective borders.

    Impassable cells are excluded from the kernel support (masked,
    renormalized convolution) and stay impassable in the output.
    """
    if not sigma_cells > 0:
        raise ValueError("sigma must be positive")
    radius = int(math.ceil(3 * sigma_cells))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(xs**2) / (2 * sigma_cells**2))
    kernel /= kernel.sum()

    passable = cm.passable
    values = np.where(passable, cm.costs, 0.0)
    weights = passable.astype(np.float64)

    def blur(img):
        tmp = ndimage.convolve1d(img, kernel, axis=0, mode="reflect")
        return ndimage.convolve1d(tmp, kernel, axis=1, mode="reflect")

    num = blur(values)
    den = blur(weights)
    out = np.full_like(cm.costs, np.inf)
    ok = passable & (den > 0)
    out[ok] = num[ok] / den[ok]
    return Costmap(out, cm.origin_x, cm.origin_y, cm.resolution)


def _check_endpoint(cm: Costmap, name: str, cell) -> None:
    i, j = cell
    if not (0 <= i < cm.width and 0 <= j < cm.height):
        raise InvalidEndpoint(f"{name} cell {cell} out of bounds")
    if not np.isfinite(cm.costs[j, i]):
        raise InvalidEndpoint(f"{name} cell {cell} is impassable")


def astar(cm: Costmap, start, goal) -> Path:
    """Minimum-cost 8-connected route from start to goal (cell indices).

    Step cost is the Euclidean step length times the mean of the two cell
    costs; the heuristic is Euclidean distance times the cheapest passable
    cell cost, which never overestimates. Ties prefer fewer steps, then
    lexicographic cell order.
    """
    start, goal = tuple(start), tuple(goal)
    _check_endpoint(cm, "start", start)
    _check_endpoint(cm, "goal", goal)
    if start == goal:
        return Path([start], 0.0)

    costs = cm.costs
    min_cost = float(costs[cm.passable].min())

    def h(cell):
        return math.hypot(cell[0] - goal[0], cell[1] - goal[1]) * min_cost

    best: dict = {start: (0.0, 0)}
    parent: dict = {}
    open_heap = [(h(start), 0, start)]
    closed = set()
    while open_heap:
        _, steps, cell = heapq.heappop(open_heap)
        if cell in closed:
            continue
        closed.add(cell)
        if cell == goal:
            path = [cell]
            while path[-1] != start:
                path.append(parent[path[-1]])
            return Path(path[::-1], best[goal][0])
        g, _ = best[cell]
        ci, cj = cell
        c_here = costs[cj, ci]
        for di, dj in _STEPS:
            ni, nj = ci + di, cj + dj
            if not (0 <= ni < cm.width and 0 <= nj < cm.height):
                continue
            c_next = costs[nj, ni]
            if not np.isfinite(c_next):
                continue
            step = math.hypot(di, dj) * 0.5 * (c_here + c_next)
            cand = (g + step, steps + 1)
            if (ni, nj) not in best or cand < best[(ni, nj)]:
                best[(ni, nj)] = cand
                parent[(ni, nj)] = cell
                heapq.heappush(open_heap, (cand[0] + h((ni, nj)), cand[1], (ni, nj)))
    raise NoPath(f"no route from {start} to {goal}")


def path_world_coordinates(cm: Costmap, path: Path) -> np.ndarray:
    """(N, 2) world coordinates of the path's cell centers."""
    return np.array([cm.cell_center(i, j) for i, j in path.cells])
