"""The episode loop: explore, extract the scene prior, plan, pass the review
gate, then bind and execute sub-steps with per-step replanning.

Nothing downstream of the gate runs until a decision arrives; rejection ends
the episode before any binding-phase action is issued.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .geometry import PITCH, cell_center, rle_encode
from .language import (Expectation, Instruction, PlanEdit, PlanningError,
                       ScenePrior, SubStep, apply_edit, parse_instruction,
                       plan_expectation, set_review_status,
                       validate_expectation, APPLIANCE_FOR)
from .manipulation import (BoundRole, RoleBinding, SubStepOutcome,
                           execute_macro, macro_for, select_target_mask)
from .mapping import (ExplorationState, MemoryEntry, ObjectMemory,
                      OccupancyGrid, mark_explored, sample_exploration_target,
                      update_object_memory, update_occupancy)
from .navigation import (UnreachableError, extract_path, fmm_solve,
                         next_nav_action)
from .perception import NoiseModel, Observation, backproject, corrupt
from .scene import SceneSpec, TaskSpec
from .world import (INTERACTION_KINDS, ActionOutcome, AtomicAction,
                    WorldConfig, WorldState, check_goal_conditions)

TRACE_SCHEMA = "gridhouse.trace/1"


@dataclass
class EpisodeConfig:
    max_steps: int = 1000
    failure_budget: int = 10
    noise: NoiseModel = field(default_factory=NoiseModel.none)
    review_mode: str = "auto_approve"       # auto_approve | interactive
    rng_seed: int = 0
    exploration_budget: Optional[int] = None  # default: 4 x cell count
    nav_step_cap: int = 220
    world: WorldConfig = field(default_factory=WorldConfig)

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class ReviewDecision:
    decision: str                     # approve | reject
    edits: List[PlanEdit] = field(default_factory=list)


@dataclass
class GateView:
    """Everything a reviewer sees at the gate."""
    instruction_goal: str
    instruction_steps: List[str]
    expectation: Expectation
    prior: ScenePrior
    map_snapshot: dict


class AutoApproveGate:
    def decide(self, view: GateView) -> ReviewDecision:
        return ReviewDecision("approve")


class EpisodeListener:
    """Override any subset; the runner calls these synchronously."""

    def on_phase(self, phase: str):
        pass

    def on_action(self, record: dict):
        pass

    def on_substep(self, index: int, outcome: SubStepOutcome):
        pass

    def on_map(self, snapshot: dict):
        pass

    def on_expectation(self, expectation: Expectation):
        pass


class _Abort(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass
class _Vantage:
    """A pose from which a category was actually seen; revisiting it restores
    the view (the world is static until the agent itself changes it)."""
    cell: Tuple[int, int]
    heading: int
    pitch: int
    pixels: int
    distance: float
    location: Tuple[float, float]

    @property
    def in_range(self) -> bool:
        # lower bound: standing nearly on top of a low receptacle pushes its
        # contents below the reach of the +/-15 deg recovery sweep
        return 0.55 <= self.distance <= 1.35


class BindingError(RuntimeError):
    def __init__(self, category: str):
        super().__init__(f"no memory entry for {category}")
        self.category = category


def nearest_entry(entries: Sequence[MemoryEntry], xy: Tuple[float, float],
                  exclude_near: Sequence[Tuple[float, float]] = (),
                  exclude_radius: float = 0.4) -> Optional[MemoryEntry]:
    best = None
    for e in entries:
        if any(math.hypot(e.center[0] - ex, e.center[1] - ey) < exclude_radius
               for ex, ey in exclude_near):
            continue
        d = math.hypot(e.center[0] - xy[0], e.center[1] - xy[1])
        if best is None or d < best[0]:
            best = (d, e)
    return best[1] if best else None


def bind_substep(substep: SubStep, memory: ObjectMemory,
                 agent_xy: Tuple[float, float],
                 exclude_near: Sequence[Tuple[float, float]] = ()):
    """Resolve a sub-step to (nav location, macro, role binding).

    GotoLocation yields no macro. Manipulations at an appliance navigate to the
    nearest appliance entry; everything else navigates to the argument.
    """
    arg = substep.argument_category
    at = substep.action_type

    def entry_for(category, use_exclusions=False):
        entries = memory.locations(category)
        e = nearest_entry(entries, agent_xy,
                          exclude_near if use_exclusions else ())
        if e is None:
            raise BindingError(category)
        return e

    if at == "GotoLocation":
        e = entry_for(arg, use_exclusions=True)
        return e.center, None, None

    macro = macro_for(at)
    roles: Dict[str, BoundRole] = {}
    if at == "PickupObject":
        e = entry_for(arg, use_exclusions=True)
        roles["target_object"] = BoundRole(arg, e.center)
        nav = e.center
    elif at == "PutObject":
        e = entry_for(arg)
        roles["receptacle"] = BoundRole(arg, e.center)
        nav = e.center
    elif at in ("HeatObject", "CoolObject", "CleanObject"):
        appliance = APPLIANCE_FOR[at]
        e = entry_for(appliance)
        roles["appliance"] = BoundRole(appliance, e.center)
        roles["target_object"] = BoundRole(arg)
        nav = e.center
        if at == "CleanObject":
            f = entry_for("Faucet")
            roles["fixture"] = BoundRole("Faucet", f.center)
            nav = f.center  # the faucet sits at the sink's back; approach it
    elif at == "ExamineObject":
        e = entry_for("FloorLamp")
        roles["appliance"] = BoundRole("FloorLamp", e.center)
        roles["target_object"] = BoundRole(arg)
        nav = e.center
    elif at in ("SliceObject", "ToggleObject"):
        e = entry_for(arg)
        roles["target_object"] = BoundRole(arg, e.center)
        nav = e.center
    else:
        raise ValueError(f"cannot bind {at!r}")
    binding = RoleBinding(roles, exclude_near=tuple(exclude_near))
    return nav, macro, binding


@dataclass
class EpisodeTrace:
    episode_id: str
    scene: dict
    task: dict
    instruction: str
    seed: int
    expectations: List[dict] = field(default_factory=list)
    actions: List[dict] = field(default_factory=list)
    substeps: List[dict] = field(default_factory=list)
    map_snapshots: List[dict] = field(default_factory=list)
    gc_fraction: Tuple[int, int] = (0, 1)
    success: bool = False
    abort_reason: str = ""
    steps: int = 0
    failed_interactions: int = 0
    wall_clock: float = 0.0

    @property
    def gc(self) -> Fraction:
        return Fraction(*self.gc_fraction)

    def to_json(self) -> dict:
        return {
            "schema": TRACE_SCHEMA, "episode_id": self.episode_id,
            "scene": self.scene, "task": self.task,
            "instruction": self.instruction, "seed": self.seed,
            "expectations": self.expectations, "actions": self.actions,
            "substeps": self.substeps, "map_snapshots": self.map_snapshots,
            "gc_fraction": list(self.gc_fraction), "gc": float(self.gc),
            "success": self.success, "abort_reason": self.abort_reason,
            "steps": self.steps,
            "failed_interactions": self.failed_interactions,
            "wall_clock": self.wall_clock,
        }

    @classmethod
    def from_json(cls, d: dict) -> "EpisodeTrace":
        if d.get("schema") != TRACE_SCHEMA:
            raise ValueError(f"unsupported trace schema {d.get('schema')!r}")
        t = cls(episode_id=d["episode_id"], scene=d["scene"], task=d["task"],
                instruction=d["instruction"], seed=d["seed"])
        t.expectations = d["expectations"]
        t.actions = d["actions"]
        t.substeps = d["substeps"]
        t.map_snapshots = d["map_snapshots"]
        t.gc_fraction = tuple(d["gc_fraction"])
        t.success = d["success"]
        t.abort_reason = d["abort_reason"]
        t.steps = d["steps"]
        t.failed_interactions = d.get("failed_interactions", 0)
        t.wall_clock = d["wall_clock"]
        return t


def _mask_rle(mask) -> Optional[list]:
    if mask is None:
        return None
    return rle_encode(np.asarray(mask, dtype=np.int8).ravel())


class EpisodeRunner:
    """Owns one world, one set of maps, and one trace for a single episode."""

    def __init__(self, scene: SceneSpec, task: TaskSpec, instruction: str,
                 config: EpisodeConfig, episode_id: str = "episode",
                 gate=None, listener: Optional[EpisodeListener] = None,
                 planner: Callable[[Instruction, ScenePrior], Expectation] = plan_expectation):
        self.scene = scene
        self.task = task
        self.config = config
        self.world = WorldState(scene, task, config.world)
        self.grid = OccupancyGrid(scene.width, scene.depth)
        self.explo = ExplorationState(scene.grid_shape, start=self.world.agent.cell)
        self.memory = ObjectMemory(rng_seed=config.rng_seed)
        self.gate = gate or AutoApproveGate()
        self.listener = listener or EpisodeListener()
        self.planner = planner
        self.phase = "exploration"
        self.instruction_text = instruction
        self._rng = np.random.default_rng([config.rng_seed, 0xEDE])
        self.trace = EpisodeTrace(episode_id=episode_id, scene=scene.to_json(),
                                  task=task.to_json(), instruction=instruction,
                                  seed=config.rng_seed)
        self._placements: List[Tuple[str, Tuple[float, float]]] = []
        self._last_picked_category: Optional[str] = None
        self._scanned_cells: set = set()
        # proven viewing poses: (category, half-meter bucket) -> vantage
        self._vantages: Dict[Tuple[str, Tuple[int, int]], _Vantage] = {}
        self._gate_passed = False

    # -- perception & stepping ---------------------------------------------

    def observe_agent(self) -> Observation:
        obs = self.world.observe()
        if self.config.noise.is_identity:
            return obs
        return corrupt(obs, self.config.noise,
                       rng_seed=(self.config.rng_seed * 100003 + self.world.t))

    def _perceive(self):
        obs = self.observe_agent()
        cloud = backproject(obs)
        update_occupancy(self.grid, cloud, self.config.world.agent_height)
        update_object_memory(self.memory, cloud, self.world.t)
        mark_explored(self.explo, obs)
        self._update_vantages(cloud)
        return obs

    def _update_vantages(self, cloud):
        from .catalog import is_category_label, label_category
        agent = self.world.agent
        ax, ay = agent.xy
        for label in np.unique(cloud.labels):
            if not is_category_label(int(label)):
                continue
            sel = cloud.labels == label
            pixels = int(sel.sum())
            if pixels < 3:
                continue
            loc = (float(np.median(cloud.xyz[sel, 0])),
                   float(np.median(cloud.xyz[sel, 1])))
            dist = math.hypot(loc[0] - ax, loc[1] - ay)
            cand = _Vantage(agent.cell, agent.heading, agent.camera_pitch,
                            pixels, dist, loc)
            key = (label_category(int(label)),
                   (round(loc[0] / 0.5), round(loc[1] / 0.5)))
            cur = self._vantages.get(key)
            if cur is None or (cand.in_range, cand.pixels) > (cur.in_range, cur.pixels):
                self._vantages[key] = cand

    def _vantage_for(self, category: str,
                     near_xy: Tuple[float, float]) -> Optional[_Vantage]:
        best = None
        for (cat, _), v in self._vantages.items():
            if cat != category or not v.in_range:
                continue
            if math.hypot(v.location[0] - near_xy[0], v.location[1] - near_xy[1]) > 0.75:
                continue
            if best is None or v.pixels > best.pixels:
                best = v
        return best

    def do(self, action: AtomicAction) -> ActionOutcome:
        if self.trace.steps >= self.config.max_steps:
            raise _Abort("max_steps")
        outcome = self.world.step(action)
        self.trace.steps += 1
        record = {
            "t": self.trace.steps, "kind": action.kind,
            "mask": _mask_rle(action.target_mask), "phase": self.phase,
            "success": outcome.success, "reason": outcome.reason,
            "pose": [*self.world.agent.cell, self.world.agent.heading,
                     self.world.agent.camera_pitch],
        }
        self.trace.actions.append(record)
        self.listener.on_action(record)
        self._perceive()
        if action.kind in INTERACTION_KINDS and not outcome.success:
            self.trace.failed_interactions += 1
            if self.trace.failed_interactions > self.config.failure_budget:
                raise _Abort("failure_budget")
        return outcome

    # -- navigation ----------------------------------------------------------

    def _inflated_passable(self) -> np.ndarray:
        inflated = ndimage.binary_dilation(self.grid.obstacles,
                                           np.ones((3, 3), dtype=bool))
        passable = ~inflated
        passable[self.world.agent.cell] = True
        return passable

    def _scan(self):
        for _ in range(4):
            self.do(AtomicAction("RotateLeft"))

    def _level_camera(self):
        while self.world.agent.camera_pitch > 0:
            self.do(AtomicAction("LookDown"))
        while self.world.agent.camera_pitch < 0:
            self.do(AtomicAction("LookUp"))

    def _mark_blocked_ahead(self):
        from .geometry import heading_vector
        di, dj = heading_vector(self.world.agent.heading)
        blocked = (self.world.agent.cell[0] + di, self.world.agent.cell[1] + dj)
        if (0 <= blocked[0] < self.grid.shape[0]
                and 0 <= blocked[1] < self.grid.shape[1]):
            self.grid.mark_obstacle(blocked)

    def _go_along(self, goal_cell, steps: int, inflate: int = 1) -> bool:
        """Replan toward goal_cell each step; True once standing on it."""
        from .geometry import heading_between
        for _ in range(steps):
            agent = self.world.agent
            if agent.cell == goal_cell:
                return True
            try:
                fld = fmm_solve(self.grid, goal_cell, inflate=inflate,
                                clear_cells=(agent.cell, goal_cell))
                path = extract_path(fld, agent.cell)
            except UnreachableError:
                return False
            action = next_nav_action(path, agent)
            if action is None:
                # the descent stops one cell short; hop onto the goal itself
                if abs(goal_cell[0] - agent.cell[0]) + \
                        abs(goal_cell[1] - agent.cell[1]) != 1:
                    return False
                want = heading_between(agent.cell, goal_cell)
                if agent.heading == want:
                    action = AtomicAction("MoveAhead")
                else:
                    delta = (want - agent.heading) % 360
                    action = AtomicAction("RotateLeft" if delta == 90
                                          else "RotateRight")
            out = self.do(action)
            if not out.success:
                if action.kind == "MoveAhead":
                    self._mark_blocked_ahead()
                else:
                    return False
        return self.world.agent.cell == goal_cell

    def _approach_candidates(self, target_xy) -> List[Tuple[float, Tuple[int, int], int]]:
        """(arrival_time, cell, best_heading) sorted; tiered constraints."""
        passable_infl = self._inflated_passable()
        passable_raw = ~self.grid.obstacles
        try:
            # raw grid: the agent may currently stand in a pocket the
            # inflated map would wall off entirely
            from_agent = fmm_solve(self.grid, self.world.agent.cell, inflate=0)
        except UnreachableError:
            return []
        # memory entries are centroids of the *visible* faces, biased toward
        # the viewing side; stopping a bit closer keeps the true instance
        # center inside the 1.5 m interaction range. The azimuth cap must
        # stay inside the half-FOV or no rotation can bring the target into
        # frame; the minimum distance keeps low furniture inside the
        # vertical FOV after one LookDown.
        tiers = ((passable_infl, 1.10, 25.0), (passable_infl, 1.30, 25.0),
                 (passable_raw, 1.30, 25.0), (passable_raw, 1.45, 28.0))
        obstacles = self.grid.obstacles
        from .geometry import bresenham, cell_of

        def sight_clear(cell, entry_cell) -> bool:
            # known obstacles block the view, except the target's own body
            # (anything within half its extent of the entry location)
            line = list(bresenham(cell, entry_cell))
            for c in line[1:-1]:
                if not obstacles[c]:
                    continue
                ox, oy = cell_center(*c)
                if math.hypot(ox - target_xy[0], oy - target_xy[1]) > 0.5:
                    return False
            return True

        entry_cell = cell_of(*target_xy)
        entry_cell = (min(max(entry_cell[0], 0), obstacles.shape[0] - 1),
                      min(max(entry_cell[1], 0), obstacles.shape[1] - 1))
        for passable, max_d, max_az in tiers:
            out = []
            nx, ny = passable.shape
            ti, tj = int(target_xy[0] / PITCH), int(target_xy[1] / PITCH)
            r = int(math.ceil(max_d / PITCH)) + 1
            for i in range(max(0, ti - r), min(nx, ti + r + 1)):
                for j in range(max(0, tj - r), min(ny, tj + r + 1)):
                    if not passable[i, j]:
                        continue
                    cx, cy = cell_center(i, j)
                    d = math.hypot(cx - target_xy[0], cy - target_xy[1])
                    if d > max_d or d < 0.55:
                        continue
                    az = math.degrees(math.atan2(target_xy[1] - cy,
                                                 target_xy[0] - cx))
                    best_h = min((0, 90, 180, 270),
                                 key=lambda h: abs((az - h + 180) % 360 - 180))
                    if abs((az - best_h + 180) % 360 - 180) > max_az:
                        continue
                    t_cost = from_agent.T[i, j]
                    if not np.isfinite(t_cost):
                        continue
                    if not sight_clear((i, j), entry_cell):
                        continue
                    out.append((float(t_cost), (i, j), best_h))
            if out:
                out.sort()
                return out
        return []

    def _assume_pose(self, heading: int, pitch: int):
        while self.world.agent.heading != heading:
            delta = (heading - self.world.agent.heading) % 360
            self.do(AtomicAction("RotateLeft" if delta == 90 else "RotateRight"))
        while self.world.agent.camera_pitch < pitch:
            self.do(AtomicAction("LookUp"))
        while self.world.agent.camera_pitch > pitch:
            self.do(AtomicAction("LookDown"))

    def navigate_to(self, target_xy: Tuple[float, float],
                    category: Optional[str] = None) -> bool:
        """Reach a cell within interaction range of the target, facing it.

        A recorded vantage (a pose the object was actually seen from) is
        preferred; fresh approach cells are the fallback.
        """
        self._level_camera()
        vantage = self._vantage_for(category, target_xy) if category else None
        if vantage is not None:
            if self._go_along(vantage.cell, self.config.nav_step_cap) \
                    or self._go_along(vantage.cell, self.config.nav_step_cap // 4,
                                      inflate=0):
                self._assume_pose(vantage.heading, vantage.pitch)
                return True
        candidates = self._approach_candidates(target_xy)
        for _, cell, heading in candidates[:3]:
            if self._go_along(cell, self.config.nav_step_cap) \
                    or self._go_along(cell, self.config.nav_step_cap // 4, inflate=0):
                self._assume_pose(heading, 0)
                return True
        return False

    # -- exploration ---------------------------------------------------------

    def run_exploration(self, budget: Optional[int] = None) -> ScenePrior:
        nx, ny = self.scene.grid_shape
        budget = budget if budget is not None else \
            (self.config.exploration_budget or 4 * nx * ny)
        self.listener.on_phase("exploring")
        self._perceive()
        self._scan()
        failures = 0
        self._scanned_cells.add(self.world.agent.cell)
        for _ in range(budget):
            target = sample_exploration_target(self.explo, self.grid, self._rng)
            if target is None:
                break
            before = self.explo.unknown_count()
            moved = self._explore_toward(target)
            if moved and self.world.agent.cell not in self._scanned_cells:
                self._scan()  # look around wherever the walk ended
                self._scanned_cells.add(self.world.agent.cell)
            progress = self.explo.unknown_count() < before
            failures = 0 if progress else failures + 1
            if failures >= 5:
                break
        self._coverage_tour()
        return ScenePrior.of(self.memory.categories())

    def _coverage_tour(self, stride: int = 2):
        """Visit a coarse grid of reachable cells and scan at each stop.

        Frontier-driven exploration can finish the unknown set from afar and
        never actually look at low furniture tucked into corners; the tour
        guarantees close-range views across the whole walkable area, pockets
        beside furniture included.
        """
        passable = ~self.grid.obstacles
        nx, ny = passable.shape
        stops = [(i, j) for i in range(1, nx - 1, stride)
                 for j in range(1, ny - 1, stride) if passable[i, j]]
        for stop in stops:
            if any(max(abs(stop[0] - si), abs(stop[1] - sj)) <= 2
                   for si, sj in self._scanned_cells):
                continue
            if self._go_along(stop, 40) or self._go_along(stop, 25, inflate=0):
                self._scan()
                self._scanned_cells.add(self.world.agent.cell)

    def _explore_toward(self, target, cap: int = 120) -> bool:
        """Walk toward target until it is explored, unreachable, or arrived
        at the nearest stand-in cell; True if any movement happened."""
        moved = False
        for _ in range(cap):
            if self.explo.explored[target]:
                return moved
            try:
                fld = fmm_solve(self.grid, target, inflate=1,
                                clear_cells=(self.world.agent.cell,))
                path = extract_path(fld, self.world.agent.cell)
            except UnreachableError:
                return moved
            action = next_nav_action(path, self.world.agent)
            if action is None:
                return moved
            out = self.do(action)
            moved = True
            if not out.success and action.kind == "MoveAhead":
                self._mark_blocked_ahead()
        return moved

    # -- the gate ------------------------------------------------------------

    def _map_snapshot(self) -> dict:
        snap = self.grid.snapshot_json()
        snap["explored_rle"] = rle_encode(self.explo.explored.astype(np.int8).ravel())
        snap["objects"] = self.memory.snapshot_json()
        snap["pose"] = [*self.world.agent.cell, self.world.agent.heading]
        return snap

    def _pass_gate(self, expectation: Expectation,
                   prior: ScenePrior) -> Optional[Expectation]:
        """Returns the approved expectation, or None on rejection."""
        self.listener.on_phase("awaiting_review")
        view = GateView(
            instruction_goal="", instruction_steps=self.instruction_text.split(". "),
            expectation=expectation, prior=prior,
            map_snapshot=self._map_snapshot(),
        )
        decision = self.gate.decide(view)
        if decision.decision == "reject":
            rejected = set_review_status(expectation, "rejected")
            self.trace.expectations.append(rejected.to_json())
            return None
        exp = expectation
        for edit in decision.edits:
            exp = apply_edit(exp, edit)
        if decision.edits:
            violations = validate_expectation(exp, prior)
            if violations:
                raise _Abort("invalid_edit")
            self.trace.expectations.append(exp.to_json())
        exp = set_review_status(
            exp, "edited_approved" if decision.edits else "approved")
        self.trace.expectations.append(exp.to_json())
        self._gate_passed = True
        return exp

    # -- the episode ---------------------------------------------------------

    def _bind_with_fallback(self, substep: SubStep):
        exclude = [loc for cat, loc in self._placements
                   if cat == substep.argument_category]
        try:
            return bind_substep(substep, self.memory, self.world.agent.xy, exclude)
        except BindingError:
            self.run_exploration(budget=10)  # one-shot re-exploration
            try:
                return bind_substep(substep, self.memory, self.world.agent.xy,
                                    exclude)
            except BindingError as e:
                raise _Abort(f"binding_failed:{e.category}")

    def _record_placement(self, substep: SubStep, nav_xy):
        # the object just placed is whatever the last pickup grabbed
        placed_cat = self._last_picked_category
        if placed_cat is None:
            return
        obs = self.observe_agent()
        mask = select_target_mask(obs, placed_cat, near=nav_xy)
        if mask is not None:
            cam = obs.camera
            rays = cam.rays()
            flat = mask.reshape(-1)
            pts = cam.position[None, :2] + obs.depth.reshape(-1)[flat, None] * rays[flat, :2]
            loc = (float(np.median(pts[:, 0])), float(np.median(pts[:, 1])))
        else:
            loc = nav_xy  # hidden (e.g. closed door); receptacle site stands in
        self._placements.append((placed_cat, loc))

    @staticmethod
    def _nav_category(substep: SubStep) -> str:
        if substep.action_type == "CleanObject":
            return "Faucet"
        return APPLIANCE_FOR.get(substep.action_type, substep.argument_category)

    def _execute_substep(self, index: int, substep: SubStep):
        nav_xy, macro, binding = self._bind_with_fallback(substep)
        if nav_xy is not None:
            if not self.navigate_to(nav_xy, self._nav_category(substep)):
                raise _Abort(f"navigation_failed:{substep.argument_category}")
        if macro is None:
            outcome = SubStepOutcome(substep.action_type, success=True)
        else:
            held = self.world.agent.held
            held_cat = self.world.obj(held).category if held else None
            outcome = execute_macro(self.do, self.observe_agent, macro,
                                    binding, held_cat)
        self.trace.substeps.append(outcome.to_json())
        self.listener.on_substep(index, outcome)
        self.trace.map_snapshots.append(self._map_snapshot())
        self.listener.on_map(self.trace.map_snapshots[-1])
        if not outcome.success:
            raise _Abort(f"substep_failed:{substep.action_type}:{outcome.reason}")
        # a successful pickup invalidates the object's remembered location
        for rec in outcome.actions:
            if rec.kind == "PickUp" and rec.success and rec.location is not None:
                self.memory.remove_near(rec.category, rec.location)
                self._vantages = {
                    k: v for k, v in self._vantages.items()
                    if not (k[0] == rec.category
                            and math.hypot(v.location[0] - rec.location[0],
                                           v.location[1] - rec.location[1]) <= 0.35)}
        if substep.action_type == "PickupObject":
            self._last_picked_category = substep.argument_category
        elif substep.action_type == "PutObject":
            self._record_placement(substep, nav_xy)

    def run(self) -> EpisodeTrace:
        t0 = time.monotonic()
        try:
            prior = self.run_exploration()
            instruction = parse_instruction(self.instruction_text)
            try:
                expectation = self.planner(instruction, prior)
            except PlanningError as e:
                raise _Abort(f"planning_error:{e}")
            self.trace.expectations.append(expectation.to_json())
            self.listener.on_expectation(expectation)
            approved = self._pass_gate(expectation, prior)
            if approved is None:
                raise _Abort("human_reject")
            self.listener.on_expectation(approved)
            self.phase = "binding"
            self.listener.on_phase("executing")
            for i, substep in enumerate(approved.substeps):
                self._execute_substep(i, substep)
        except _Abort as abort:
            self.trace.abort_reason = abort.reason
        frac, success = check_goal_conditions(self.world, self.task)
        self.trace.gc_fraction = (frac.numerator, frac.denominator)
        self.trace.success = success
        self.trace.wall_clock = time.monotonic() - t0
        self.listener.on_phase("finished" if not self.trace.abort_reason
                               else "aborted")
        return self.trace


def run_episode(scene: SceneSpec, task: TaskSpec, instruction: str,
                config: EpisodeConfig, episode_id: str = "episode",
                gate=None, listener=None) -> EpisodeTrace:
    return EpisodeRunner(scene, task, instruction, config,
                         episode_id=episode_id, gate=gate,
                         listener=listener).run()


def replay_trace(trace: EpisodeTrace,
                 config: Optional[WorldConfig] = None) -> Tuple[Fraction, bool]:
    """Re-simulate the recorded action list from the stored scene and task.

    Returns the final (gc_fraction, success); bit-exact equality with the
    trace is the replayability invariant.
    """
    from .geometry import rle_decode
    scene = SceneSpec.from_json(trace.scene)
    task = TaskSpec.from_json(trace.task)
    world = WorldState(scene, task, config or WorldConfig())
    f = world.config.frame_size
    for rec in trace.actions:
        mask = None
        if rec["mask"] is not None:
            mask = rle_decode(rec["mask"], f * f, dtype=np.int8).reshape(f, f) > 0
        world.step(AtomicAction(rec["kind"], mask))
    return check_goal_conditions(world, task)
