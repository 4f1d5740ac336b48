"""Occupancy accumulation, DBSCAN vs a naive reference, object memory,
explored/unknown bookkeeping, and exploration target sampling."""

import math

import numpy as np
import pytest

from gridhouse.catalog import CATEGORY_IDS
from gridhouse.mapping import (ExplorationState, ObjectMemory, OccupancyGrid,
                               dbscan, frontier_cells, mark_explored,
                               sample_exploration_target, update_occupancy,
                               update_object_memory)
from gridhouse.perception import CameraModel, NoiseModel, SemanticPointCloud, backproject
from gridhouse.world import AtomicAction, WorldConfig, WorldState

from conftest import make_room, obj

H = 0.9


def cloud_of(points):
    """points: iterable of (x, y, h[, label])"""
    pts = np.array([(p[0], p[1], p[2]) for p in points], dtype=float)
    labels = np.array([p[3] if len(p) > 3 else CATEGORY_IDS["Apple"] for p in points],
                      dtype=np.int16)
    return SemanticPointCloud(pts, labels, np.full(len(points), -1, dtype=np.int32))


def brute_force_grid(all_points, shape, agent_height):
    """Independent recount of the occupancy formula from every point ever binned."""
    grid = np.zeros(shape, dtype=np.int8)
    for x, y, h in all_points:
        i, j = int(math.floor(x / 0.25)), int(math.floor(y / 0.25))
        if 0 <= i < shape[0] and 0 <= j < shape[1] and 0.0 < h < agent_height:
            grid[i, j] = 1
    return grid


class TestOccupancy:
    def test_single_low_point_marks_obstacle(self):
        g = OccupancyGrid(4.0, 4.0)
        update_occupancy(g, cloud_of([(0.9, 1.1, 0.5)]), H)
        assert g.values()[3, 4] == 1

    def test_high_points_stay_passable(self):
        g = OccupancyGrid(4.0, 4.0)
        update_occupancy(g, cloud_of([(0.9, 1.1, 1.5), (0.9, 1.1, 2.0)]), H)
        assert g.values()[3, 4] == 0

    def test_height_band_boundaries(self):
        eps = 1e-6
        for h, expect in [(0.05, 1), (H - eps, 1), (H + eps, 0), (H, 0), (0.0, 0)]:
            g = OccupancyGrid(4.0, 4.0)
            update_occupancy(g, cloud_of([(1.0, 1.0, h)]), H)
            assert g.values()[4, 4] == expect, h

    def test_matches_brute_force_recount(self, rng):
        g = OccupancyGrid(5.0, 4.0)
        everything = []
        for _ in range(20):
            pts = np.column_stack([rng.uniform(-0.5, 5.5, 60),
                                   rng.uniform(-0.5, 4.5, 60),
                                   rng.uniform(-0.2, 2.0, 60)])
            everything.extend(map(tuple, pts))
            update_occupancy(g, cloud_of([tuple(p) for p in pts]), H)
            assert (g.values() == brute_force_grid(everything, g.shape, H)).all()

    def test_outside_points_discarded_with_counter(self):
        g = OccupancyGrid(4.0, 4.0)
        update_occupancy(g, cloud_of([(-1.0, 1.0, 0.5), (9.0, 1.0, 0.5),
                                      (1.0, 1.0, 0.5)]), H)
        assert g.discarded_points == 2
        assert g.values().sum() == 1

    def test_obstacles_sticky(self, rng):
        g = OccupancyGrid(4.0, 4.0)
        update_occupancy(g, cloud_of([(1.0, 1.0, 0.4)]), H)
        before = g.values().copy()
        update_occupancy(g, cloud_of([(1.0, 1.0, 1.8), (3.0, 3.0, 0.4)]), H)
        assert (g.values() >= before).all()


def naive_dbscan(points, eps, min_pts):
    """O(n^2) reference: core graph components by repeated sweeps over the full
    distance matrix, border points to the nearest core. Independent of the
    KD-tree implementation under test."""
    n = len(points)
    d2 = ((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
    within = d2 <= eps * eps
    core = within.sum(axis=1) >= min_pts
    labels = np.full(n, -1)
    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != -1:
            continue
        labels[i] = cluster
        changed = True
        while changed:  # propagate over the core adjacency until fixpoint
            changed = False
            for p in range(n):
                if core[p] and labels[p] == cluster:
                    for q in range(n):
                        if core[q] and within[p, q] and labels[q] == -1:
                            labels[q] = cluster
                            changed = True
        cluster += 1
    for p in range(n):
        if core[p] or labels[p] != -1:
            continue
        cands = [(d2[p, q], labels[q]) for q in range(n) if core[q] and within[p, q]]
        if cands:
            labels[p] = min(cands)[1]
    return labels


def partition_of(labels):
    clusters = {}
    noise = set()
    for i, l in enumerate(labels):
        if l < 0:
            noise.add(i)
        else:
            clusters.setdefault(l, set()).add(i)
    return frozenset(frozenset(c) for c in clusters.values()), noise


class TestDbscan:
    def test_two_separated_blobs(self, rng):
        a = rng.normal(0.0, 0.05, size=(10, 2))
        b = rng.normal(5.0, 0.05, size=(10, 2))
        labels = dbscan(np.vstack([a, b]), eps=0.5, min_pts=5)
        assert set(labels) == {0, 1}
        assert len(set(labels[:10])) == 1 and len(set(labels[10:])) == 1

    def test_fewer_than_min_pts_all_noise(self, rng):
        pts = rng.normal(0.0, 0.01, size=(4, 2))
        assert (dbscan(pts, eps=1.0, min_pts=5) == -1).all()

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_naive_reference(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(20, 200))
        pts = rng.uniform(0, 4, size=(n, 2))
        mine = partition_of(dbscan(pts, eps=0.5, min_pts=5))
        ref = partition_of(naive_dbscan(pts, eps=0.5, min_pts=5))
        assert mine == ref

    def test_order_invariant_up_to_relabeling(self, rng):
        pts = rng.uniform(0, 3, size=(120, 2))
        perm = rng.permutation(len(pts))
        base = dbscan(pts, eps=0.4, min_pts=4)
        shuffled = dbscan(pts[perm], eps=0.4, min_pts=4)
        unshuffled = np.empty_like(shuffled)
        unshuffled[perm] = shuffled
        assert partition_of(base) == partition_of(unshuffled)

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            dbscan(np.zeros((3, 2)), eps=0.0, min_pts=3)
        with pytest.raises(ValueError):
            dbscan(np.zeros((3, 2)), eps=0.5, min_pts=0)


class TestObjectMemory:
    def _observe_into(self, world, mem, t=0):
        cloud = backproject(world.observe())
        update_object_memory(mem, cloud, t)

    def test_single_apple_two_viewpoints(self):
        apple = obj("Apple_1", "Apple", 2.0, 1.125, z_base=0.5)
        table = obj("Table_1", "Table", 2.0, 1.125)
        apple.contained_in = "Table_1"
        world = WorldState(make_room(objects=[table, apple], start=(12, 4, 180)))
        mem = ObjectMemory()
        self._observe_into(world, mem, 0)
        world.agent.cell = (12, 6)
        self._observe_into(world, mem, 1)
        entries = mem.locations("Apple")
        assert len(entries) == 1
        ex, ey = entries[0].center
        assert math.hypot(ex - 2.0, ey - 1.125) <= 0.5

    def test_unseen_category_absent(self):
        world = WorldState(make_room(start=(8, 8, 0)))
        mem = ObjectMemory()
        self._observe_into(world, mem)
        assert mem.locations("Fridge") == []

    def test_two_instances_two_entries(self):
        t1 = obj("Table_1", "Table", 1.5, 1.125)
        t2 = obj("Table_2", "Table", 4.5, 1.125)
        m1 = obj("Mug_1", "Mug", 1.5, 1.125, z_base=0.5, contained_in="Table_1")
        m2 = obj("Mug_2", "Mug", 4.5, 1.125, z_base=0.5, contained_in="Table_2")
        world = WorldState(make_room(width=6.0, depth=4.0,
                                     objects=[t1, t2, m1, m2], start=(12, 4, 180)))
        mem = ObjectMemory()
        for heading in (180, 0):  # one mug dead ahead on each side
            world.agent.heading = heading
            self._observe_into(world, mem)
        entries = mem.locations("Mug")
        assert len(entries) == 2
        centers = sorted(e.center[0] for e in entries)
        assert abs(centers[0] - 1.5) <= 0.5 and abs(centers[1] - 4.5) <= 0.5


class TestExploration:
    def test_agent_cell_explored_initially(self):
        st = ExplorationState((16, 16), start=(8, 8))
        assert st.explored[8, 8]
        assert st.unknown_count() == 16 * 16 - 1

    def test_four_rotation_scan_covers_small_room(self):
        # with a 90 deg FOV, four headings tile the full circle
        scene = make_room(width=3.5, depth=3.5, start=(7, 7, 0))
        world = WorldState(scene, config=WorldConfig(fov_deg=90.0))
        st = ExplorationState(scene.grid_shape, start=world.agent.cell)
        for _ in range(4):
            mark_explored(st, world.observe())
            world.step(AtomicAction("RotateLeft"))
        assert st.unknown_count() == 0

    def test_cells_behind_wall_stay_unknown(self):
        # interior wall splits the room; the far side is occluded
        scene = make_room(width=4.0, depth=4.0, start=(4, 8, 0),
                          extra_walls=[(2.0, 2.25, 0.25, 3.75)])
        world = WorldState(scene, config=WorldConfig(fov_deg=90.0))
        st = ExplorationState(scene.grid_shape, start=world.agent.cell)
        for _ in range(4):
            mark_explored(st, world.observe())
            world.step(AtomicAction("RotateLeft"))
        behind = st.explored[10:15, 4:12]
        assert not behind.any()
        assert st.explored[:8, :].sum() > 50

    def test_explored_only_grows(self):
        scene = make_room(start=(8, 8, 0))
        world = WorldState(scene)
        st = ExplorationState(scene.grid_shape, start=world.agent.cell)
        mark_explored(st, world.observe())
        before = st.explored.copy()
        world.step(AtomicAction("RotateLeft"))
        mark_explored(st, world.observe())
        assert (st.explored >= before).all()


class TestSampler:
    def test_single_frontier_cell_chosen(self):
        g = OccupancyGrid(1.0, 1.0)  # 4x4
        st = ExplorationState((4, 4))
        st.explored[:] = True
        st.explored[3, 3] = False
        assert sample_exploration_target(st, g, 0) == (3, 3)

    def test_exploration_complete_signal(self):
        g = OccupancyGrid(1.0, 1.0)
        st = ExplorationState((4, 4))
        st.explored[:] = True
        assert sample_exploration_target(st, g, 0) is None

    def test_deterministic_sequence(self):
        g = OccupancyGrid(2.0, 2.0)
        st = ExplorationState((8, 8), start=(4, 4))
        st.explored[3:6, 3:6] = True
        rng_a = np.random.default_rng(9)
        rng_b = np.random.default_rng(9)
        seq_a = [sample_exploration_target(st, g, rng_a) for _ in range(10)]
        seq_b = [sample_exploration_target(st, g, rng_b) for _ in range(10)]
        assert seq_a == seq_b

    def test_frontier_preferred_over_interior_unknown(self):
        g = OccupancyGrid(2.0, 2.0)
        st = ExplorationState((8, 8))
        st.explored[0:2, 0:2] = True
        frontier = set(frontier_cells(st, g))
        assert frontier  # cells hugging the explored corner
        for seed in range(5):
            assert sample_exploration_target(st, g, seed) in frontier
