"""Fast-marching fields against Euclidean/Dijkstra oracles, path validity,
and waypoint-to-action conversion."""

import heapq

import numpy as np
import pytest

from gridhouse.geometry import PITCH
from gridhouse.navigation import (ArrivalField, Path, UnreachableError,
                                  extract_path, fmm_solve, next_nav_action)
from gridhouse.scene import AgentState


def dijkstra_4(passable, start, goal):
    """Independent 4-connected shortest path cost in meters; inf if unreachable."""
    nx, ny = passable.shape
    dist = {start: 0}
    heap = [(0, start)]
    while heap:
        d, cell = heapq.heappop(heap)
        if cell == goal:
            return d * PITCH
        if d > dist.get(cell, float("inf")):
            continue
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nb = (cell[0] + di, cell[1] + dj)
            if 0 <= nb[0] < nx and 0 <= nb[1] < ny and passable[nb]:
                if d + 1 < dist.get(nb, float("inf")):
                    dist[nb] = d + 1
                    heapq.heappush(heap, (d + 1, nb))
    return float("inf")


def path_is_valid(path, field):
    wps = path.waypoints
    for a, b in zip(wps, wps[1:]):
        if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
            return False
        if field.T[b] >= field.T[a] - 1e-12:
            return False
    return all(field.passable[c] for c in wps)


class TestFmmField:
    def test_goal_time_zero(self):
        obstacles = np.zeros((16, 16), dtype=bool)
        field = fmm_solve(obstacles, (5, 5), inflate=0)
        assert field.T[5, 5] == 0.0

    def test_empty_grid_times_track_euclidean_within_8pct(self):
        obstacles = np.zeros((64, 64), dtype=bool)
        goal = (5, 7)
        field = fmm_solve(obstacles, goal, inflate=0)
        ii, jj = np.meshgrid(np.arange(64), np.arange(64), indexing="ij")
        exact = np.hypot(ii - goal[0], jj - goal[1]) * PITCH
        mask = exact > 1e-9
        rel = np.abs(field.T[mask] - exact[mask]) / exact[mask]
        assert rel.max() <= 0.08

    def test_error_shrinks_when_pitch_halves(self):
        def max_rel(n, pitch, goal):
            field = fmm_solve(np.zeros((n, n), dtype=bool), goal, inflate=0,
                              pitch=pitch)
            ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
            exact = np.hypot(ii - goal[0], jj - goal[1]) * pitch
            mask = exact > 1e-9
            return (np.abs(field.T[mask] - exact[mask]) / exact[mask]).max()

        coarse = max_rel(64, 0.25, (5, 7))
        fine = max_rel(128, 0.125, (10, 14))
        assert fine < coarse

    def test_sealed_region_unreachable(self):
        obstacles = np.zeros((12, 12), dtype=bool)
        obstacles[6, :] = True  # full wall
        field = fmm_solve(obstacles, (2, 2), inflate=0)
        assert np.isinf(field.T[9, 9])
        assert np.isfinite(field.T[3, 3])

    def test_goal_on_obstacle_substituted(self):
        obstacles = np.zeros((12, 12), dtype=bool)
        obstacles[5, 5] = True
        field = fmm_solve(obstacles, (5, 5), inflate=0)
        assert field.substituted
        assert abs(field.goal[0] - 5) + abs(field.goal[1] - 5) == 1

    def test_no_passable_near_goal_raises(self):
        obstacles = np.ones((12, 12), dtype=bool)
        with pytest.raises(UnreachableError):
            fmm_solve(obstacles, (5, 5), inflate=0)

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        obstacles = rng.random((32, 32)) < 0.2
        obstacles[3, 3] = False
        a = fmm_solve(obstacles, (3, 3), inflate=0)
        b = fmm_solve(obstacles, (3, 3), inflate=0)
        assert (a.T == b.T).all()


class TestExtractPath:
    def test_adjacent_start_single_step(self):
        field = fmm_solve(np.zeros((8, 8), dtype=bool), (4, 4), inflate=0)
        path = extract_path(field, (4, 5))
        assert path.waypoints == [(4, 5)]

    def test_corridor_straight_path(self):
        field = fmm_solve(np.zeros((10, 1), dtype=bool), (9, 0), inflate=0)
        path = extract_path(field, (0, 0))
        assert path.waypoints == [(i, 0) for i in range(9)]
        assert len(path) == 9

    def test_unreachable_start(self):
        obstacles = np.zeros((12, 12), dtype=bool)
        obstacles[6, :] = True
        field = fmm_solve(obstacles, (2, 2), inflate=0)
        with pytest.raises(UnreachableError):
            extract_path(field, (9, 9))

    @pytest.mark.parametrize("seed", range(20))
    def test_random_grids_against_dijkstra(self, seed):
        rng = np.random.default_rng(seed)
        obstacles = rng.random((32, 32)) < 0.2
        free = np.argwhere(~obstacles)
        goal = tuple(free[rng.integers(0, len(free))])
        start = tuple(free[rng.integers(0, len(free))])
        field = fmm_solve(obstacles, goal, inflate=0)
        optimum = dijkstra_4(~obstacles, start, field.goal)
        if not np.isfinite(field.T[start]):
            assert np.isinf(optimum)
            return
        path = extract_path(field, start)
        assert path_is_valid(path, field)
        assert path.cost(field) <= 1.1 * optimum + 1e-9
        euclid = np.hypot(start[0] - field.goal[0], start[1] - field.goal[1]) * PITCH
        assert path.cost(field) >= euclid - 1e-9

    def test_inflation_keeps_clearance(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            obstacles = rng.random((24, 24)) < 0.08
            field = None
            try:
                field = fmm_solve(obstacles, (22, 22), inflate=1)
                path = extract_path(field, (1, 1))
            except UnreachableError:
                continue
            for i, j in path.waypoints:
                patch = obstacles[max(0, i - 1):i + 2, max(0, j - 1):j + 2]
                assert not patch.any()


class TestNextNavAction:
    def _agent(self, cell=(4, 4), heading=0):
        return AgentState(cell=cell, heading=heading)

    def test_waypoint_ahead_moves(self):
        act = next_nav_action(Path([(4, 4), (5, 4)]), self._agent(heading=0))
        assert act.kind == "MoveAhead"

    def test_waypoint_behind_rotates_right(self):
        act = next_nav_action(Path([(3, 4)]), self._agent(heading=0))
        assert act.kind == "RotateRight"

    def test_waypoint_left_rotates_left(self):
        act = next_nav_action(Path([(4, 5)]), self._agent(heading=0))
        assert act.kind == "RotateLeft"

    def test_waypoint_right_rotates_right(self):
        act = next_nav_action(Path([(4, 3)]), self._agent(heading=0))
        assert act.kind == "RotateRight"

    def test_arrived_returns_none(self):
        assert next_nav_action(Path([(4, 4)]), self._agent()) is None
