"""Agent-side maps: the 2D obstacle grid, explored/unknown sets, and the
clustered per-category object location memory.

A cell is an obstacle as soon as any point with height strictly between the
floor and the agent's height lands in it, and it stays an obstacle (sticky
accumulation). Cells whose points all sit above the agent remain passable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from .catalog import is_category_label, label_category
from .geometry import PITCH, cell_of
from .perception import CameraModel, Observation, SemanticPointCloud

Cell = Tuple[int, int]

DEFAULT_EPS = 0.5      # two cells
DEFAULT_MIN_PTS = 5
MEMORY_POINT_CAP = 5000


class OccupancyGrid:
    def __init__(self, width: float, depth: float, pitch: float = PITCH):
        self.pitch = pitch
        self.shape = (int(round(width / pitch)), int(round(depth / pitch)))
        self.low_counts = np.zeros(self.shape, dtype=np.int64)
        self.discarded_points = 0

    @property
    def obstacles(self) -> np.ndarray:
        return self.low_counts > 0

    def values(self) -> np.ndarray:
        """0/1 obstacle map."""
        return (self.low_counts > 0).astype(np.int8)

    def mark_obstacle(self, cell: Cell):
        self.low_counts[cell] += 1

    def snapshot_json(self) -> dict:
        from .geometry import rle_encode
        return {"shape": list(self.shape), "pitch": self.pitch,
                "cells_rle": rle_encode(self.values().ravel())}


def update_occupancy(grid: OccupancyGrid, cloud: SemanticPointCloud,
                     agent_height: float) -> OccupancyGrid:
    """Bin cloud points into the grid; only heights in (0, H) count as obstacles."""
    if len(cloud) == 0:
        return grid
    xyz = cloud.xyz
    i = np.floor(xyz[:, 0] / grid.pitch).astype(np.int64)
    j = np.floor(xyz[:, 1] / grid.pitch).astype(np.int64)
    inside = (i >= 0) & (i < grid.shape[0]) & (j >= 0) & (j < grid.shape[1])
    grid.discarded_points += int((~inside).sum())
    low = inside & (xyz[:, 2] > 0.0) & (xyz[:, 2] < agent_height)
    np.add.at(grid.low_counts, (i[low], j[low]), 1)
    return grid


def dbscan(points: np.ndarray, eps: float, min_pts: int,
           weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Density clustering; labels per point, clusters numbered from 0, noise -1.

    A point is core when at least min_pts points (itself included) lie within
    eps. Clusters are the density-connected components of the core points;
    border points join the cluster of their nearest core point, which makes
    the partition independent of input order whenever no two relevant
    distances tie exactly. Optional weights give points a multiplicity for
    the core count.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    points = np.asarray(points, dtype=float)
    n = len(points)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    tree = cKDTree(points)
    neighborhoods = tree.query_ball_point(points, eps)
    if weights is None:
        core = np.array([len(nb) >= min_pts for nb in neighborhoods])
    else:
        core = np.array([weights[nb].sum() >= min_pts for nb in neighborhoods])
    cluster = 0
    for seed in range(n):
        if labels[seed] != -1 or not core[seed]:
            continue
        labels[seed] = cluster
        queue = [seed]
        while queue:
            p = queue.pop()
            for q in neighborhoods[p]:
                if core[q] and labels[q] == -1:
                    labels[q] = cluster
                    queue.append(q)
        cluster += 1
    for p in range(n):  # border points
        if labels[p] != -1 or core[p]:
            continue
        best = None
        for q in neighborhoods[p]:
            if core[q]:
                d = float(np.sum((points[p] - points[q]) ** 2))
                if best is None or d < best[0]:
                    best = (d, labels[q])
        if best is not None:
            labels[p] = best[1]
    return labels


@dataclass
class MemoryEntry:
    center: Tuple[float, float]
    support: int
    last_updated: int


_QUANT = 0.05  # meters; accumulated points collapse onto this fine grid


class ObjectMemory:
    """Per-category clustered object locations built from accumulated points.

    Points accumulate every update as a multiset quantized to a 5 cm grid
    (bounded memory without discarding observations); clustering runs lazily
    when locations are read, over the full accumulated multiset.
    """

    def __init__(self, eps: float = DEFAULT_EPS, min_pts: int = DEFAULT_MIN_PTS,
                 cap: int = MEMORY_POINT_CAP, rng_seed: int = 0):
        self.eps = eps
        self.min_pts = min_pts
        self.cap = cap  # unique quantized positions per category
        self._counts: Dict[str, Dict[Tuple[int, int], int]] = {}
        self._entries: Dict[str, List[MemoryEntry]] = {}
        self._dirty: Set[str] = set()
        self._t = 0

    def add_cloud(self, cloud: SemanticPointCloud, timestep: int):
        self._t = max(self._t, timestep)
        for label in np.unique(cloud.labels):
            if not is_category_label(int(label)):
                continue
            cat = label_category(int(label))
            pts = cloud.xyz[cloud.labels == label, :2]
            q = np.round(pts / _QUANT).astype(np.int64)
            cells, counts = np.unique(q, axis=0, return_counts=True)
            store = self._counts.setdefault(cat, {})
            for (qi, qj), c in zip(cells, counts):
                key = (int(qi), int(qj))
                if key in store or len(store) < self.cap:
                    store[key] = store.get(key, 0) + int(c)
            self._dirty.add(cat)

    def _recluster(self, cat: str):
        store = self._counts.get(cat, {})
        entries = self._entries.setdefault(cat, [])
        if store:
            pts = np.array(list(store.keys()), dtype=float) * _QUANT
            weights = np.array(list(store.values()), dtype=float)
            labels = dbscan(pts, self.eps, self.min_pts, weights=weights)
            for c in range(labels.max() + 1 if labels.size else 0):
                members = labels == c
                w = weights[members]
                center = (float(np.average(pts[members, 0], weights=w)),
                          float(np.average(pts[members, 1], weights=w)))
                support = int(w.sum())
                merged = False
                for e in entries:
                    if math.hypot(e.center[0] - center[0], e.center[1] - center[1]) <= self.eps:
                        e.center = center
                        e.support = support
                        e.last_updated = self._t
                        merged = True
                        break
                if not merged:
                    entries.append(MemoryEntry(center, support, self._t))
        self._dirty.discard(cat)

    def locations(self, category: str) -> List[MemoryEntry]:
        if category in self._dirty:
            self._recluster(category)
        return list(self._entries.get(category, ()))

    def remove_near(self, category: str, xy: Tuple[float, float],
                    radius: float = 0.35):
        """Forget points and entries around a location (e.g. after picking the
        object up); nearby points of other instances survive."""
        store = self._counts.get(category)
        if store:
            gone = [k for k in store
                    if math.hypot(k[0] * _QUANT - xy[0], k[1] * _QUANT - xy[1]) <= radius]
            for k in gone:
                del store[k]
        entries = self._entries.get(category)
        if entries is not None:
            self._entries[category] = [
                e for e in entries
                if math.hypot(e.center[0] - xy[0], e.center[1] - xy[1]) > radius]
        self._dirty.add(category)

    def categories(self) -> Set[str]:
        return {c for c in set(self._entries) | set(self._dirty) if self.locations(c)}

    def snapshot_json(self) -> dict:
        return {cat: [{"center": list(e.center), "support": e.support,
                       "last_updated": e.last_updated} for e in self.locations(cat)]
                for cat in sorted(set(self._entries) | set(self._dirty))
                if self.locations(cat)}


def update_object_memory(mem: ObjectMemory, cloud: SemanticPointCloud,
                         timestep: int = 0) -> ObjectMemory:
    mem.add_cloud(cloud, timestep)
    return mem


class ExplorationState:
    """Explored set P_s / unknown set P_u over the grid; P_s only grows."""

    def __init__(self, shape: Tuple[int, int], start: Optional[Cell] = None):
        self.explored = np.zeros(shape, dtype=bool)
        if start is not None:
            self.explored[start] = True

    @property
    def unknown(self) -> np.ndarray:
        return ~self.explored

    def unknown_count(self) -> int:
        return int((~self.explored).sum())


_SEEN_MARGIN = 0.2  # includes the hit cell itself, excludes the cell behind it


def mark_explored(state: ExplorationState, obs: Observation) -> ExplorationState:
    """Move every cell whose center the current view sweeps into the explored set.

    A cell counts as seen when its center lies inside the horizontal field of
    view and its distance does not exceed the largest horizontal reach observed
    in that viewing column (occlusion-aware).
    """
    cam = obs.camera
    f = cam.frame_size
    dirs = cam.rays()
    horiz = np.hypot(dirs[:, 0], dirs[:, 1]).reshape(f, f)
    reach = (obs.depth * horiz).max(axis=0)  # per column

    nx, ny = state.explored.shape
    ci, cj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    cx = (ci + 0.5) * PITCH
    cy = (cj + 0.5) * PITCH
    ax, ay = cam.position[0], cam.position[1]
    dx, dy = cx - ax, cy - ay
    dist = np.hypot(dx, dy)
    az = np.degrees(np.arctan2(dy, dx)) - cam.heading
    az = (az + 180.0) % 360.0 - 180.0

    tan_half = math.tan(math.radians(cam.fov_deg) / 2.0)
    in_fov = np.abs(az) <= cam.fov_deg / 2.0 + 1e-9
    u = -np.tan(np.radians(az)) / tan_half          # +1 right edge, -1 left edge
    col = np.clip(((u + 1.0) * f / 2.0 - 0.5).round().astype(int), 0, f - 1)
    seen = in_fov & (dist <= reach[col] + _SEEN_MARGIN)
    seen[cam.cell] = True
    state.explored |= seen
    return state


def frontier_cells(state: ExplorationState, grid: OccupancyGrid) -> List[Cell]:
    """Unknown cells 8-adjacent to an explored, passable cell."""
    exp_passable = state.explored & ~grid.obstacles
    near = np.zeros_like(exp_passable)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            src = exp_passable[max(0, -di):exp_passable.shape[0] - max(0, di),
                               max(0, -dj):exp_passable.shape[1] - max(0, dj)]
            near[max(0, di):near.shape[0] - max(0, -di),
                 max(0, dj):near.shape[1] - max(0, -dj)] |= src
    frontier = state.unknown & near
    return [tuple(c) for c in np.argwhere(frontier)]


def sample_exploration_target(state: ExplorationState, grid: OccupancyGrid,
                              rng_seed: Union[int, np.random.Generator]) -> Optional[Cell]:
    """A frontier cell when one exists, else any unknown cell; None when done."""
    rng = (rng_seed if isinstance(rng_seed, np.random.Generator)
           else np.random.default_rng(rng_seed))
    if state.unknown_count() == 0:
        return None
    cells = frontier_cells(state, grid)
    if not cells:
        cells = [tuple(c) for c in np.argwhere(state.unknown)]
    k = int(rng.integers(0, len(cells)))
    return (int(cells[k][0]), int(cells[k][1]))
