"""Planner tests: cost lookup, analytic Gaussian kernel, Dijkstra oracle,
and the corridor-centering property."""

import math

from conftest import dijkstra_cost

import numpy as np
import pytest

from groundmap.annotate import SurfaceClass
from groundmap.errors import InvalidEndpoint, MissingClassCost, NoPath
from groundmap.plan import (
    DEFAULT_COST_TABLE,
    Costmap,
    Path,
    astar,
    gaussian_smooth,
    map_to_costmap,
    path_world_coordinates,
)


class TestMapToCostmap:
    def test_all_pedestrian_uniform(self):
        classes = np.full((5, 5), int(SurfaceClass.PEDESTRIAN), dtype=np.uint8)
        cm = map_to_costmap(classes)
        np.testing.assert_array_equal(cm.costs, 1.0)

    def test_obstacle_impassable(self):
        classes = np.full((3, 3), int(SurfaceClass.OBSTACLE), dtype=np.uint8)
        cm = map_to_costmap(classes)
        assert np.isinf(cm.costs).all()
        assert not cm.passable.any()

    def test_mixed_map_matches_lookup_oracle(self):
        rng = np.random.default_rng(0)
        classes = rng.integers(0, 5, (6, 7)).astype(np.uint8)
        cm = map_to_costmap(classes)
        for j in range(6):
            for i in range(7):
                want = DEFAULT_COST_TABLE[SurfaceClass(classes[j, i])]
                assert cm.costs[j, i] == want or (math.isinf(want) and math.isinf(cm.costs[j, i]))

    def test_missing_class_cost(self):
        with pytest.raises(MissingClassCost):
            map_to_costmap(np.zeros((2, 2), np.uint8), {SurfaceClass.ROAD: 1.0})


class TestGaussianSmooth:
    def test_uniform_map_unchanged(self):
        cm = Costmap(np.full((9, 9), 3.7))
        out = gaussian_smooth(cm, sigma_cells=1.5)
        np.testing.assert_allclose(out.costs, 3.7, atol=1e-9)

    def test_single_spike_matches_analytic_kernel(self):
        n = 41
        base = np.zeros((n, n))
        base[20, 20] = 100.0
        out = gaussian_smooth(Costmap(base), sigma_cells=2.0)
        radius = int(math.ceil(3 * 2.0))
        xs = np.arange(-radius, radius + 1, dtype=float)
        k1 = np.exp(-(xs**2) / (2 * 4.0))
        k1 /= k1.sum()
        analytic = 100.0 * np.outer(k1, k1)
        got = out.costs[20 - radius : 20 + radius + 1, 20 - radius : 20 + radius + 1]
        np.testing.assert_allclose(got, analytic, atol=1e-6)
        # symmetric bell
        np.testing.assert_allclose(out.costs, out.costs.T, atol=1e-12)

    def test_impassable_cells_preserved_and_excluded(self):
        base = np.ones((7, 7))
        base[3, 3] = np.inf
        out = gaussian_smooth(Costmap(base), sigma_cells=1.0)
        assert np.isinf(out.costs[3, 3])
        finite = out.costs[np.isfinite(out.costs)]
        # excluding the wall from the kernel keeps neighbors at the plateau value
        np.testing.assert_allclose(finite, 1.0, atol=1e-9)

    def test_sigma_validation(self):
        with pytest.raises(ValueError):
            gaussian_smooth(Costmap(np.ones((3, 3))), 0.0)


class TestAstar:
    def test_start_equals_goal(self):
        cm = Costmap(np.ones((5, 5)))
        p = astar(cm, (2, 2), (2, 2))
        assert p.cells == [(2, 2)]
        assert p.total_cost == 0.0

    def test_uniform_map_straight_geodesic(self):
        cm = Costmap(np.ones((10, 10)))
        p = astar(cm, (0, 0), (7, 3))
        # Chebyshev-optimal: 3 diagonal + 4 straight steps at unit cell cost
        assert len(p.cells) == 7 + 1
        assert p.total_cost == pytest.approx(3 * math.sqrt(2) + 4)
        oracle = dijkstra_cost(cm, (0, 0), (7, 3))
        assert p.total_cost == pytest.approx(oracle, abs=1e-12)

    def test_matches_dijkstra_on_random_maps(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            costs = rng.uniform(0.5, 10.0, (15, 15))
            costs[rng.random((15, 15)) < 0.15] = np.inf
            costs[0, 0] = costs[14, 14] = 1.0
            cm = Costmap(costs)
            oracle = dijkstra_cost(cm, (0, 0), (14, 14))
            if oracle is None:
                with pytest.raises(NoPath):
                    astar(cm, (0, 0), (14, 14))
                continue
            p = astar(cm, (0, 0), (14, 14))
            assert p.total_cost == pytest.approx(oracle, abs=1e-9)
            # path cost really is the sum of its step costs
            total = 0.0
            for a, b in zip(p.cells[:-1], p.cells[1:]):
                assert max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1
                total += math.hypot(b[0] - a[0], b[1] - a[1]) * 0.5 * (
                    cm.costs[a[1], a[0]] + cm.costs[b[1], b[0]]
                )
            assert total == pytest.approx(p.total_cost, abs=1e-9)

    def test_walls_force_detour(self):
        costs = np.ones((7, 7))
        costs[1:, 3] = np.inf  # wall with a gap at the top row
        cm = Costmap(costs)
        p = astar(cm, (0, 6), (6, 6))
        assert (3, 0) in p.cells or (3, 1) not in p.cells
        assert p.total_cost == pytest.approx(dijkstra_cost(cm, (0, 6), (6, 6)), abs=1e-9)

    def test_invalid_endpoints(self):
        costs = np.ones((4, 4))
        costs[2, 2] = np.inf
        cm = Costmap(costs)
        with pytest.raises(InvalidEndpoint):
            astar(cm, (2, 2), (0, 0))
        with pytest.raises(InvalidEndpoint):
            astar(cm, (0, 0), (9, 9))

    def test_no_path(self):
        costs = np.ones((5, 5))
        costs[:, 2] = np.inf
        with pytest.raises(NoPath):
            astar(Costmap(costs), (0, 0), (4, 0))

    def test_corridor_centering_after_smoothing(self):
        # 5-cell-wide low-cost corridor flanked by high cost: after sigma>=1
        # smoothing the optimal path stays off the two outermost corridor rows.
        costs = np.full((9, 30), 50.0)
        costs[2:7, :] = 1.0  # corridor rows 2..6
        cm = gaussian_smooth(Costmap(costs), sigma_cells=1.0)
        p = astar(cm, (0, 4), (29, 4))
        rows = {j for _, j in p.cells}
        assert rows <= {3, 4, 5}

    def test_path_world_coordinates(self):
        cm = Costmap(np.ones((4, 4)), origin_x=10.0, origin_y=-2.0, resolution=0.5)
        p = Path([(0, 0), (1, 1)], 1.0)
        np.testing.assert_allclose(
            path_world_coordinates(cm, p), [[10.25, -1.75], [10.75, -1.25]]
        )
