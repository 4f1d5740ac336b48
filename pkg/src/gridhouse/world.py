"""The household gridworld simulator: action execution and goal evaluation.

A WorldState owns a mutable copy of a scene plus the agent pose. Failed or
blocked actions never mutate anything. Interaction actions carry a pixel mask
that is resolved against the current ground-truth segmentation frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

import numpy as np

from .geometry import PITCH, heading_vector, rotate_heading
from .perception import CameraModel, Observation
from .render import render_frames
from .scene import (AgentState, GoalCondition, ObjectInstance, SceneSpec,
                    TaskSpec, clone_objects, static_passable_grid)

NAV_KINDS = ("MoveAhead", "RotateLeft", "RotateRight", "LookUp", "LookDown")
INTERACTION_KINDS = ("PickUp", "Put", "Open", "Close", "ToggleOn", "ToggleOff", "Slice")
ACTION_KINDS = NAV_KINDS + INTERACTION_KINDS


@dataclass(frozen=True)
class WorldConfig:
    agent_height: float = 0.9       # obstacle height cutoff H
    camera_height: float = 0.6
    interaction_range: float = 1.5
    frame_size: int = 64
    fov_deg: float = 60.0
    max_range: float = 5.0


@dataclass
class AtomicAction:
    kind: str
    target_mask: Optional[np.ndarray] = None  # (F, F) bool; interaction kinds only

    def __post_init__(self):
        if self.kind not in ACTION_KINDS:
            raise ValueError(f"unknown action kind {self.kind!r}")
        if self.kind in NAV_KINDS and self.target_mask is not None:
            raise ValueError(f"{self.kind} must not carry a mask")


@dataclass
class ActionOutcome:
    success: bool
    reason: str = ""
    resolved_instance: Optional[str] = None

    def __bool__(self) -> bool:
        return self.success


def _fail(reason: str, inst: Optional[str] = None) -> ActionOutcome:
    return ActionOutcome(False, reason, inst)


class WorldState:
    """Single-owner mutable world; one episode owns one instance."""

    def __init__(self, scene: SceneSpec, task: Optional[TaskSpec] = None,
                 config: WorldConfig = WorldConfig()):
        self.config = config
        self.scene = SceneSpec(
            room_id=scene.room_id, width=scene.width, depth=scene.depth,
            wall_segments=list(scene.wall_segments),
            objects=clone_objects(scene.objects),
            split_tag=scene.split_tag, template_id=scene.template_id,
            agent_start=scene.agent_start,
        )
        self.task = task
        i, j, heading = scene.agent_start
        self.agent = AgentState(cell=(i, j), heading=heading, height=config.agent_height)
        self.t = 0
        self.passable = static_passable_grid(self.scene)
        self._by_id: Dict[str, ObjectInstance] = {o.instance_id: o for o in self.scene.objects}
        if task is not None:
            self._apply_task_setup(task)

    def _apply_task_setup(self, task: TaskSpec):
        # clean tasks start from a dirty target; everything else uses catalog defaults
        if task.task_type == "CleanPlace":
            for o in self.scene.instances_of(task.target_category):
                o.cleanliness = "dirty"

    # -- queries ----------------------------------------------------------

    def obj(self, instance_id: str) -> ObjectInstance:
        return self._by_id[instance_id]

    def contents_of(self, instance_id: str) -> List[ObjectInstance]:
        return [o for o in self.scene.objects if o.contained_in == instance_id]

    def camera(self) -> CameraModel:
        c = self.config
        return CameraModel(cell=self.agent.cell, heading=self.agent.heading,
                           pitch=self.agent.camera_pitch, height=c.camera_height,
                           fov_deg=c.fov_deg, frame_size=c.frame_size,
                           max_range=c.max_range)

    def observe(self) -> Observation:
        return render_frames(self.scene, self.camera(), self.agent.held)

    # -- stepping ---------------------------------------------------------

    def step(self, action: AtomicAction) -> ActionOutcome:
        self.t += 1
        if action.kind in NAV_KINDS:
            outcome = self._step_nav(action.kind)
        else:
            outcome = self._step_interaction(action)
        if outcome.success:
            self._apply_world_rules()
        return outcome

    def _step_nav(self, kind: str) -> ActionOutcome:
        a = self.agent
        if kind == "MoveAhead":
            di, dj = heading_vector(a.heading)
            ni, nj = a.cell[0] + di, a.cell[1] + dj
            nx, ny = self.passable.shape
            if not (0 <= ni < nx and 0 <= nj < ny) or not self.passable[ni, nj]:
                return _fail("blocked")
            a.cell = (ni, nj)
        elif kind == "RotateLeft":
            a.heading = rotate_heading(a.heading, 1)
        elif kind == "RotateRight":
            a.heading = rotate_heading(a.heading, -1)
        elif kind == "LookUp":
            if a.camera_pitch + 15 > 60:
                return _fail("pitch_limit")
            a.camera_pitch += 15
        elif kind == "LookDown":
            if a.camera_pitch - 15 < -60:
                return _fail("pitch_limit")
            a.camera_pitch -= 15
        return ActionOutcome(True)

    def _resolve_mask(self, mask: Optional[np.ndarray]) -> Tuple[Optional[int], str]:
        f = self.config.frame_size
        if mask is None or not np.asarray(mask).any():
            return None, "empty_mask"
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (f, f):
            return None, "mask_shape"
        obs = self.observe()
        under = obs.instances[mask]
        under = under[under >= 0]
        if under.size == 0:
            return None, "unresolvable_mask"
        idxs, counts = np.unique(under, return_counts=True)
        best = counts == counts.max()
        if best.sum() == 1:
            return int(idxs[np.argmax(counts)]), ""
        # tie: nearer instance wins
        ax, ay = self.agent.xy
        tied = idxs[best]
        dists = [math.hypot(self.scene.objects[k].x - ax, self.scene.objects[k].y - ay)
                 for k in tied]
        return int(tied[int(np.argmin(dists))]), ""

    def _step_interaction(self, action: AtomicAction) -> ActionOutcome:
        k, reason = self._resolve_mask(action.target_mask)
        if k is None:
            return _fail(reason)
        target = self.scene.objects[k]
        ax, ay = self.agent.xy
        if math.hypot(target.x - ax, target.y - ay) > self.config.interaction_range:
            return _fail("out_of_range", target.instance_id)
        handler = getattr(self, "_do_" + action.kind.lower())
        return handler(target)

    def _do_pickup(self, target: ObjectInstance) -> ActionOutcome:
        if not target.info.pickupable:
            return _fail("affordance", target.instance_id)
        if self.agent.held is not None:
            return _fail("hands_full", target.instance_id)
        target.contained_in = None
        self.agent.held = target.instance_id
        return ActionOutcome(True, resolved_instance=target.instance_id)

    def _do_put(self, target: ObjectInstance) -> ActionOutcome:
        if self.agent.held is None:
            return _fail("not_holding", target.instance_id)
        if not target.info.receptacle:
            return _fail("affordance", target.instance_id)
        if target.info.cavity and target.info.openable and not target.is_open:
            return _fail("receptacle_closed", target.instance_id)
        held = self.obj(self.agent.held)
        spot = self._find_put_spot(target, held)
        if spot is None:
            return _fail("receptacle_full", target.instance_id)
        held.contained_in = target.instance_id
        held.x, held.y = spot
        held.yaw = 0
        held.z_base = (target.z_base + 0.02) if target.info.cavity else target.top
        self._restack_contents(held)
        self.agent.held = None
        return ActionOutcome(True, resolved_instance=target.instance_id)

    def _restack_contents(self, parent: ObjectInstance):
        for inner in self.contents_of(parent.instance_id):
            inner.x, inner.y = parent.x, parent.y
            inner.z_base = parent.top
            self._restack_contents(inner)

    def _find_put_spot(self, rec: ObjectInstance,
                       held: ObjectInstance) -> Optional[Tuple[float, float]]:
        rx0, rx1, ry0, ry1 = rec.footprint()
        hw, hd, _ = held.extent
        margin = 0.01
        x_lo, x_hi = rx0 + hw / 2 + margin, rx1 - hw / 2 - margin
        y_lo, y_hi = ry0 + hd / 2 + margin, ry1 - hd / 2 - margin
        if x_lo > x_hi or y_lo > y_hi:
            return None
        others = [o for o in self.contents_of(rec.instance_id)
                  if o.instance_id != held.instance_id]
        cx, cy = (x_lo + x_hi) / 2, (y_lo + y_hi) / 2
        candidates = [(cx, cy)]
        for fx in (0.0, -1.0, 1.0):
            for fy in (0.0, -1.0, 1.0):
                if fx == 0.0 and fy == 0.0:
                    continue
                candidates.append((cx + fx * (x_hi - x_lo) / 2, cy + fy * (y_hi - y_lo) / 2))
        for px, py in candidates:
            ok = True
            for o in others:
                ow, od, _ = o.extent
                if abs(px - o.x) < (hw + ow) / 2 and abs(py - o.y) < (hd + od) / 2:
                    ok = False
                    break
            if ok:
                return px, py
        return None

    def _do_open(self, target: ObjectInstance) -> ActionOutcome:
        if not target.info.openable:
            return _fail("affordance", target.instance_id)
        if target.is_open:
            return _fail("already_open", target.instance_id)
        target.is_open = True
        return ActionOutcome(True, resolved_instance=target.instance_id)

    def _do_close(self, target: ObjectInstance) -> ActionOutcome:
        if not target.info.openable:
            return _fail("affordance", target.instance_id)
        if not target.is_open:
            return _fail("already_closed", target.instance_id)
        target.is_open = False
        return ActionOutcome(True, resolved_instance=target.instance_id)

    def _do_toggleon(self, target: ObjectInstance) -> ActionOutcome:
        if not target.info.toggleable:
            return _fail("affordance", target.instance_id)
        if target.is_on:
            return _fail("already_on", target.instance_id)
        if target.category == "Microwave" and target.is_open:
            return _fail("door_open", target.instance_id)
        target.is_on = True
        if target.category == "Microwave":
            for inner in self.contents_of(target.instance_id):
                inner.temperature = "hot"
        elif target.category == "Faucet" and target.contained_in is not None:
            basin = self.obj(target.contained_in)
            for inner in self.contents_of(basin.instance_id):
                if inner.info.pickupable:
                    inner.cleanliness = "clean"
        return ActionOutcome(True, resolved_instance=target.instance_id)

    def _do_toggleoff(self, target: ObjectInstance) -> ActionOutcome:
        if not target.info.toggleable:
            return _fail("affordance", target.instance_id)
        if not target.is_on:
            return _fail("already_off", target.instance_id)
        target.is_on = False
        return ActionOutcome(True, resolved_instance=target.instance_id)

    def _do_slice(self, target: ObjectInstance) -> ActionOutcome:
        if not target.info.sliceable:
            return _fail("affordance", target.instance_id)
        if target.is_sliced:
            return _fail("already_sliced", target.instance_id)
        held = self.agent.held
        if held is None or self.obj(held).category != "Knife":
            return _fail("no_knife", target.instance_id)
        target.is_sliced = True
        return ActionOutcome(True, resolved_instance=target.instance_id)

    def _apply_world_rules(self):
        # a closed fridge chills its contents at the end of every step
        for o in self.scene.objects:
            if o.category == "Fridge" and not o.is_open:
                for inner in self.contents_of(o.instance_id):
                    inner.temperature = "cold"


def step(world: WorldState, action: AtomicAction) -> Tuple[WorldState, ActionOutcome]:
    return world, world.step(action)


def render_observation(world: WorldState) -> Observation:
    return world.observe()


def _check_condition(world: WorldState, cond: GoalCondition) -> bool:
    scene = world.scene
    if cond.pred == "contained":
        count = 0
        for o in scene.instances_of(cond.category):
            if o.contained_in is None:
                continue
            if world.obj(o.contained_in).category == cond.receptacle:
                count += 1
        return count >= cond.min_count
    if cond.pred == "state_eq":
        return any(getattr(o, cond.state_field) == cond.value
                   for o in scene.instances_of(cond.category))
    if cond.pred == "held":
        held = world.agent.held
        return held is not None and world.obj(held).category == cond.category
    raise ValueError(f"unknown predicate {cond.pred!r}")


def check_goal_conditions(world: WorldState, task: TaskSpec) -> Tuple[Fraction, bool]:
    """Fraction of satisfied goal conditions and whether all are satisfied."""
    conds = task.goal_conditions
    if not conds:
        raise ValueError("task has no goal conditions")
    satisfied = sum(_check_condition(world, c) for c in conds)
    frac = Fraction(satisfied, len(conds))
    return frac, satisfied == len(conds)
