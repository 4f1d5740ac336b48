"""Eikonal arrival-time fields on the occupancy grid (fast marching), greedy
path extraction, and conversion of the next waypoint into a discrete action.

First-order upwind scheme at unit speed; the wavefront heap breaks ties by
cell index, so fields and paths are fully deterministic. Arrival times within
a short radius of the goal are seeded with exact Euclidean distances (line of
sight checked), which removes the point-source singularity error.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from .geometry import PITCH, bresenham, heading_between
from .scene import AgentState
from .world import AtomicAction

Cell = Tuple[int, int]

EXACT_INIT_RADIUS = 0.75   # meters; singularity removal around the goal
GOAL_SUBSTITUTION_RADIUS = 4  # cells

# descent tie-break order: N, E, S, W
_NESW = ((0, 1), (1, 0), (0, -1), (-1, 0))


class UnreachableError(RuntimeError):
    pass


@dataclass
class ArrivalField:
    T: np.ndarray              # arrival time (meters at unit speed); inf unreachable
    goal: Cell                 # effective goal (after passable substitution)
    requested_goal: Cell
    passable: np.ndarray       # inflated-passable grid the field was solved on
    pitch: float

    @property
    def substituted(self) -> bool:
        return self.goal != self.requested_goal


@dataclass
class Path:
    waypoints: List[Cell]

    def __len__(self) -> int:
        return len(self.waypoints)

    def cost(self, field: Optional[ArrivalField] = None) -> float:
        """Traversal length in meters; adds the terminal stub to the goal if known."""
        c = (len(self.waypoints) - 1) * PITCH
        if field is not None:
            c += float(field.T[self.waypoints[-1]])
        return c


def _obstacle_array(grid) -> np.ndarray:
    if isinstance(grid, np.ndarray):
        return grid.astype(bool)
    return grid.obstacles  # OccupancyGrid


def _nearest_passable(passable: np.ndarray, goal: Cell) -> Optional[Cell]:
    nx, ny = passable.shape
    r = GOAL_SUBSTITUTION_RADIUS
    best = None
    for i in range(max(0, goal[0] - r), min(nx, goal[0] + r + 1)):
        for j in range(max(0, goal[1] - r), min(ny, goal[1] + r + 1)):
            if not passable[i, j]:
                continue
            d2 = (i - goal[0]) ** 2 + (j - goal[1]) ** 2
            key = (d2, i, j)
            if d2 <= r * r and (best is None or key < best):
                best = key
    return (best[1], best[2]) if best else None


def fmm_solve(grid, goal: Cell, inflate: int = 1, pitch: float = PITCH,
              clear_cells: Tuple[Cell, ...] = ()) -> ArrivalField:
    """Solve the eikonal equation toward goal over the (inflated) obstacle grid.

    clear_cells are forced passable after inflation (the agent's own cell, which
    dilation of an adjacent obstacle may otherwise swallow).
    """
    obstacles = _obstacle_array(grid)
    if inflate > 0:
        size = 2 * inflate + 1
        obstacles = ndimage.binary_dilation(obstacles, np.ones((size, size), dtype=bool))
    passable = ~obstacles
    for c in clear_cells:
        passable[c] = True
    requested = goal
    if not passable[goal]:
        sub = _nearest_passable(passable, goal)
        if sub is None:
            raise UnreachableError(f"no passable cell within "
                                   f"{GOAL_SUBSTITUTION_RADIUS} cells of {goal}")
        goal = sub

    nx, ny = passable.shape
    T = np.full((nx, ny), np.inf)
    known = np.zeros((nx, ny), dtype=bool)
    heap: List[Tuple[float, int, int]] = []

    # exact arrival times near the goal remove the point-source error; a cell
    # is only seeded when the whole goal..cell rectangle is free, so every
    # seed keeps a strictly-smaller 4-neighbor (greedy descent cannot stall)
    r_cells = int(math.ceil(EXACT_INIT_RADIUS / pitch))
    for di in range(-r_cells, r_cells + 1):
        for dj in range(-r_cells, r_cells + 1):
            i, j = goal[0] + di, goal[1] + dj
            if not (0 <= i < nx and 0 <= j < ny):
                continue
            d = math.hypot(di, dj) * pitch
            if d > EXACT_INIT_RADIUS + 1e-12:
                continue
            i0, i1 = sorted((goal[0], i))
            j0, j1 = sorted((goal[1], j))
            if passable[i0:i1 + 1, j0:j1 + 1].all():
                T[i, j] = d
                heapq.heappush(heap, (d, i, j))
    if not heap:
        T[goal] = 0.0
        heapq.heappush(heap, (0.0, goal[0], goal[1]))

    def eikonal_update(i: int, j: int) -> float:
        a = min(T[i - 1, j] if i > 0 else np.inf,
                T[i + 1, j] if i < nx - 1 else np.inf)
        b = min(T[i, j - 1] if j > 0 else np.inf,
                T[i, j + 1] if j < ny - 1 else np.inf)
        if a > b:
            a, b = b, a
        if b - a <= pitch:  # both directions inform the update
            return (a + b + math.sqrt(2.0 * pitch * pitch - (a - b) ** 2)) / 2.0
        return a + pitch

    while heap:
        t, i, j = heapq.heappop(heap)
        if known[i, j] or t > T[i, j]:
            continue
        known[i, j] = True
        for di, dj in _NESW:
            ni, nj = i + di, j + dj
            if 0 <= ni < nx and 0 <= nj < ny and passable[ni, nj] and not known[ni, nj]:
                nt = eikonal_update(ni, nj)
                if nt < T[ni, nj]:
                    T[ni, nj] = nt
                    heapq.heappush(heap, (nt, ni, nj))

    return ArrivalField(T=T, goal=goal, requested_goal=requested,
                        passable=passable, pitch=pitch)


def extract_path(field: ArrivalField, start: Cell) -> Path:
    """Greedy steepest descent on arrival time; stops within one cell of the goal."""
    T = field.T
    if not np.isfinite(T[start]):
        raise UnreachableError(f"start {start} unreachable from goal {field.goal}")
    nx, ny = T.shape
    cur = start
    waypoints = [cur]
    for _ in range(nx * ny):
        if T[cur] <= field.pitch + 1e-9:
            break
        best = None
        for di, dj in _NESW:
            ni, nj = cur[0] + di, cur[1] + dj
            if 0 <= ni < nx and 0 <= nj < ny and T[ni, nj] < T[cur] - 1e-12:
                if best is None or T[ni, nj] < T[best] - 1e-12:
                    best = (ni, nj)
        if best is None:
            raise UnreachableError(f"descent stuck at {cur}")
        cur = best
        waypoints.append(cur)
    return Path(waypoints)


def next_nav_action(path: Path, agent: AgentState) -> Optional[AtomicAction]:
    """One discrete action toward the first waypoint; None when already there."""
    if not path.waypoints:
        raise ValueError("empty path")
    wp = path.waypoints[0]
    if wp == agent.cell and len(path.waypoints) > 1:
        wp = path.waypoints[1]
    if wp == agent.cell:
        return None
    target_heading = heading_between(agent.cell, wp)
    delta = (target_heading - agent.heading) % 360
    if delta == 0:
        return AtomicAction("MoveAhead")
    if delta == 90:
        return AtomicAction("RotateLeft")
    # 180 ties break right, 270 is a single right turn
    return AtomicAction("RotateRight")
