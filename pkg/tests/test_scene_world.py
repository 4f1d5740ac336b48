"""Simulator ground truth: generation invariants, action semantics, goals."""

import json
from dataclasses import replace

import numpy as np
import pytest

from gridhouse.generate import (TARGET_POOLS, generate_scene, generate_task,
                                template_pool)
from gridhouse.scene import (GoalCondition, TaskSpec, containment_chain,
                             validate_scene)
from gridhouse.world import (AtomicAction, WorldConfig, WorldState,
                             check_goal_conditions)

from conftest import make_room, obj


def full_mask(world, category=None, instance_id=None):
    """Ground-truth pixel mask for an instance (or a category's best instance)."""
    obs = world.observe()
    if instance_id is not None:
        k = next(i for i, o in enumerate(world.scene.objects)
                 if o.instance_id == instance_id)
        return obs.instances == k
    from gridhouse.catalog import CATEGORY_IDS
    return obs.labels == CATEGORY_IDS[category]


class TestGeneration:
    def test_deterministic_byte_identical(self):
        a = json.dumps(generate_scene(0, "train").to_json(), sort_keys=True)
        b = json.dumps(generate_scene(0, "train").to_json(), sort_keys=True)
        assert a == b

    def test_split_templates_disjoint(self):
        seen = {t.template_id for t in template_pool("train")}
        assert seen == {t.template_id for t in template_pool("valid_seen")}
        unseen = {t.template_id for t in template_pool("valid_unseen")}
        assert not (seen & unseen)
        assert generate_scene(0, "train").template_id != \
            generate_scene(0, "valid_unseen").template_id

    @pytest.mark.parametrize("split", ["train", "valid_seen", "valid_unseen"])
    def test_invariants_over_corpus(self, split):
        for seed in range(100):
            scene = generate_scene(seed, split)
            assert validate_scene(scene) == []

    def test_fresh_world_never_satisfied(self):
        for seed in range(4):
            scene = generate_scene(seed, "train")
            for task_type in TARGET_POOLS:
                task = generate_task(scene, task_type, seed + 17)
                world = WorldState(scene, task)
                _, done = check_goal_conditions(world, task)
                assert not done, (seed, task_type)


class TestStep:
    def test_move_into_wall_blocked(self):
        scene = make_room(start=(1, 1, 180))  # wall one cell to the west
        world = WorldState(scene)
        before = world.agent.cell
        out = world.step(AtomicAction("MoveAhead"))
        assert not out.success and out.reason == "blocked"
        assert world.agent.cell == before

    def test_move_and_rotate(self):
        world = WorldState(make_room(start=(4, 4, 0)))
        assert world.step(AtomicAction("MoveAhead")).success
        assert world.agent.cell == (5, 4)
        world.step(AtomicAction("RotateLeft"))
        assert world.agent.heading == 90
        world.step(AtomicAction("RotateRight"))
        world.step(AtomicAction("RotateRight"))
        assert world.agent.heading == 270

    def test_pitch_limits(self):
        world = WorldState(make_room(start=(4, 4, 0)))
        for _ in range(4):
            world.step(AtomicAction("LookDown"))
        assert world.agent.camera_pitch == -60
        out = world.step(AtomicAction("LookDown"))
        assert not out.success and out.reason == "pitch_limit"
        assert world.agent.camera_pitch == -60

    def _microwave_world(self):
        # object row aligned with the agent's camera axis, ~1.1 m ahead
        mw = obj("Microwave_1", "Microwave", 2.0, 1.125)
        apple = obj("Apple_1", "Apple", 2.0, 1.125, z_base=0.05,
                    contained_in="Microwave_1")
        scene = make_room(objects=[mw, apple], start=(12, 4, 180))
        return WorldState(scene)

    def test_toggle_on_microwave_heats_contents(self):
        world = self._microwave_world()
        mask = full_mask(world, "Microwave")
        assert mask.any()
        out = world.step(AtomicAction("ToggleOn", mask))
        assert out.success, out.reason
        assert world.obj("Apple_1").temperature == "hot"

    def test_pickup_non_pickupable_fails(self):
        world = self._microwave_world()
        mask = full_mask(world, "Microwave")
        snapshot = json.dumps(world.scene.to_json(), sort_keys=True)
        out = world.step(AtomicAction("PickUp", mask))
        assert not out.success and out.reason == "affordance"
        assert json.dumps(world.scene.to_json(), sort_keys=True) == snapshot

    def test_contents_hidden_while_door_closed(self):
        world = self._microwave_world()
        assert not full_mask(world, "Apple").any()
        mask = full_mask(world, "Microwave")
        assert world.step(AtomicAction("Open", mask)).success
        assert full_mask(world, "Apple").any()

    def test_pick_from_open_microwave_and_close(self):
        world = self._microwave_world()
        world.step(AtomicAction("Open", full_mask(world, "Microwave")))
        out = world.step(AtomicAction("PickUp", full_mask(world, "Apple")))
        assert out.success, out.reason
        assert world.agent.held == "Apple_1"
        assert world.step(AtomicAction("Close", full_mask(world, "Microwave"))).success

    def test_toggle_requires_closed_door(self):
        world = self._microwave_world()
        world.step(AtomicAction("Open", full_mask(world, "Microwave")))
        out = world.step(AtomicAction("ToggleOn", full_mask(world, "Microwave")))
        assert not out.success and out.reason == "door_open"

    def test_fridge_cools_on_close(self):
        fridge = obj("Fridge_1", "Fridge", 2.0, 1.125)
        tomato = obj("Tomato_1", "Tomato", 3.0, 3.0, z_base=0.0)
        scene = make_room(objects=[fridge, tomato], start=(12, 4, 180))
        world = WorldState(scene)
        world.step(AtomicAction("Open", full_mask(world, "Fridge")))
        # grab the tomato via direct state (placement is tested elsewhere)
        world.agent.held = "Tomato_1"
        tomato_obj = world.obj("Tomato_1")
        tomato_obj.contained_in = None
        assert world.step(AtomicAction("Put", full_mask(world, "Fridge"))).success
        assert tomato_obj.temperature == "room"
        assert world.step(AtomicAction("Close", full_mask(world, "Fridge"))).success
        assert tomato_obj.temperature == "cold"

    def test_faucet_cleans_sink_contents(self):
        sink = obj("SinkBasin_1", "SinkBasin", 2.0, 1.125)
        faucet = obj("Faucet_1", "Faucet", 2.0, 0.95, z_base=0.35,
                     contained_in="SinkBasin_1")
        mug = obj("Mug_1", "Mug", 2.0, 1.125, z_base=0.05, cleanliness="dirty",
                  contained_in="SinkBasin_1")
        world = WorldState(make_room(objects=[sink, faucet, mug], start=(12, 4, 180)))
        out = world.step(AtomicAction("ToggleOn", full_mask(world, "Faucet")))
        assert out.success, out.reason
        assert world.obj("Mug_1").cleanliness == "clean"
        assert world.step(AtomicAction("ToggleOff", full_mask(world, "Faucet"))).success

    def test_slice_requires_knife(self):
        apple = obj("Apple_1", "Apple", 2.0, 1.125, z_base=0.5)
        table = obj("Table_1", "Table", 2.0, 1.125)
        apple.contained_in = "Table_1"
        knife = obj("Knife_1", "Knife", 3.5, 3.5)
        world = WorldState(make_room(objects=[table, apple, knife], start=(12, 4, 180)))
        out = world.step(AtomicAction("Slice", full_mask(world, "Apple")))
        assert not out.success and out.reason == "no_knife"
        world.agent.held = "Knife_1"
        world.obj("Knife_1").contained_in = None
        out = world.step(AtomicAction("Slice", full_mask(world, "Apple")))
        assert out.success and world.obj("Apple_1").is_sliced

    def test_out_of_range_interaction(self):
        mw = obj("Microwave_1", "Microwave", 1.0, 1.125)
        world = WorldState(make_room(width=5.0, depth=5.0, objects=[mw],
                                     start=(16, 4, 180)))
        mask = full_mask(world, "Microwave")
        assert mask.any()
        out = world.step(AtomicAction("Open", mask))
        assert not out.success and out.reason == "out_of_range"

    def test_empty_mask_rejected(self):
        world = self._microwave_world()
        f = world.config.frame_size
        out = world.step(AtomicAction("Open", np.zeros((f, f), dtype=bool)))
        assert not out.success and out.reason == "empty_mask"

    def test_containment_stays_acyclic_through_actions(self):
        world = self._microwave_world()
        world.step(AtomicAction("Open", full_mask(world, "Microwave")))
        world.step(AtomicAction("PickUp", full_mask(world, "Apple")))
        world.step(AtomicAction("Put", full_mask(world, "Microwave")))
        for o in world.scene.objects:
            containment_chain(world.scene, o)  # raises on a cycle


class TestDeterminism:
    def test_identical_action_sequence_identical_trajectory(self):
        scene = generate_scene(3, "train")
        actions = ["MoveAhead", "RotateLeft", "MoveAhead", "MoveAhead",
                   "RotateRight", "MoveAhead", "LookDown", "MoveAhead"]

        def run():
            world = WorldState(scene)
            frames = []
            for kind in actions:
                world.step(AtomicAction(kind))
                o = world.observe()
                frames.append((o.depth.tobytes(), o.labels.tobytes()))
            return world.agent.cell, world.agent.heading, frames

        assert run() == run()


class TestRenderGeometry:
    def test_wall_one_meter_ahead(self):
        # wall face at x=2.0; agent cell (3,8) center x=0.875 -> raise: use exact
        scene = make_room(width=4.0, depth=4.0, walls=False,
                          extra_walls=[(2.0, 2.25, 0.0, 4.0)], start=(3, 8, 0))
        world = WorldState(scene, config=WorldConfig(frame_size=65))
        obs = world.observe()
        center = float(obs.depth[32, 32])
        expected = 2.0 - 0.875
        assert abs(center - expected) <= 0.125

    def test_empty_view_all_background(self):
        scene = make_room(walls=False, start=(8, 8, 0))
        world = WorldState(scene)
        for _ in range(4):
            world.step(AtomicAction("LookUp"))
        obs = world.observe()
        from gridhouse.catalog import LABEL_BACKGROUND
        assert (obs.labels == LABEL_BACKGROUND).all()
        assert (obs.depth == world.config.max_range).all()

    def test_raycast_consistency_against_boxes(self):
        # every labeled pixel's 3D hit point lies on (within half a cell of)
        # a box of the labeled category / structure
        from gridhouse.catalog import (LABEL_BACKGROUND, LABEL_FLOOR,
                                       LABEL_WALL, label_category)
        from gridhouse.scene import WALL_HEIGHT
        scene = generate_scene(1, "train")
        world = WorldState(scene)
        for _ in range(4):
            obs = world.observe()
            pts = world.camera().position[None, :] + \
                obs.depth.reshape(-1, 1) * world.camera().rays()
            labs = obs.labels.reshape(-1)
            for k in range(0, pts.shape[0], 97):
                lab = int(labs[k])
                if lab == LABEL_BACKGROUND:
                    continue
                p = pts[k]
                if lab == LABEL_FLOOR:
                    assert abs(p[2]) <= 0.125
                    continue
                if lab == LABEL_WALL:
                    boxes = [(x0, x1, y0, y1, 0.0, WALL_HEIGHT)
                             for x0, x1, y0, y1 in scene.wall_segments]
                else:
                    boxes = [o.box3d() for o in scene.objects
                             if o.category == label_category(lab)]
                d = min(_box_surface_distance(p, b) for b in boxes)
                assert d <= 0.125 + 1e-6, (k, lab, d)
            world.step(AtomicAction("RotateLeft"))


def _box_surface_distance(p, box):
    x0, x1, y0, y1, z0, z1 = box
    lo = np.array([x0, y0, z0])
    hi = np.array([x1, y1, z1])
    outside = np.maximum(np.maximum(lo - p, 0.0), p - hi)
    d_out = float(np.linalg.norm(outside))
    if d_out > 0:
        return d_out
    return float(np.min(np.minimum(p - lo, hi - p)))


class TestGoalConditions:
    def _heat_place_world(self):
        fridge = obj("Fridge_1", "Fridge", 2.0, 1.0)
        apple = obj("Apple_1", "Apple", 3.0, 3.0)
        scene = make_room(objects=[fridge, apple], start=(8, 8, 0))
        task = TaskSpec("HeatPlace", "Apple", "Fridge", goal_conditions=[
            GoalCondition("state_eq", "Apple", state_field="temperature", value="hot"),
            GoalCondition("contained", "Apple", receptacle="Fridge"),
            GoalCondition("state_eq", "Fridge", state_field="is_open", value=False),
        ])
        return WorldState(scene, task), task

    def test_partial_fraction(self):
        world, task = self._heat_place_world()
        world.obj("Apple_1").temperature = "hot"
        world.obj("Apple_1").contained_in = "Fridge_1"
        world.obj("Fridge_1").is_open = True
        frac, done = check_goal_conditions(world, task)
        assert frac == pytest.approx(2 / 3) and frac.denominator == 3
        assert not done

    def test_all_satisfied(self):
        world, task = self._heat_place_world()
        world.obj("Apple_1").temperature = "hot"
        world.obj("Apple_1").contained_in = "Fridge_1"
        frac, done = check_goal_conditions(world, task)
        assert frac == 1 and done
