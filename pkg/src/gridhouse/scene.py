"""Scene, object, agent, and task types plus their JSON schemas and validators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .catalog import CATALOG
from .geometry import PITCH, bresenham, cell_center, cell_of

SPLITS = ("train", "valid_seen", "valid_unseen")
TASK_TYPES = ("PickPlace", "StackPlace", "Pick2Place", "HeatPlace",
              "CoolPlace", "CleanPlace", "Examine")

SCENE_SCHEMA = "gridhouse.scene/1"
TASK_SCHEMA = "gridhouse.task/1"

# tall enough that no ray inside max range clears a wall top (occlusion stays exact)
WALL_HEIGHT = 4.0
AGENT_REACH = 1.0  # max pickupable object height


@dataclass
class ObjectInstance:
    instance_id: str
    category: str
    x: float
    y: float
    yaw: int = 0
    z_base: float = 0.0
    is_open: bool = False
    is_on: bool = False
    is_sliced: bool = False
    temperature: str = "room"      # room | hot | cold
    cleanliness: str = "clean"     # clean | dirty
    contained_in: Optional[str] = None

    @property
    def info(self):
        return CATALOG[self.category]

    @property
    def extent(self) -> Tuple[float, float, float]:
        return self.info.extent

    def footprint(self) -> Tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) of the axis-aligned footprint, yaw applied."""
        w, d, _ = self.extent
        if self.yaw % 180 == 90:
            w, d = d, w
        return self.x - w / 2, self.x + w / 2, self.y - d / 2, self.y + d / 2

    def box3d(self) -> Tuple[float, float, float, float, float, float]:
        x0, x1, y0, y1 = self.footprint()
        return x0, x1, y0, y1, self.z_base, self.z_base + self.extent[2]

    @property
    def top(self) -> float:
        return self.z_base + self.extent[2]

    def to_json(self) -> dict:
        return {
            "instance_id": self.instance_id, "category": self.category,
            "pose": [self.x, self.y, self.yaw], "z_base": self.z_base,
            "state": {
                "is_open": self.is_open, "is_on": self.is_on,
                "is_sliced": self.is_sliced, "temperature": self.temperature,
                "cleanliness": self.cleanliness,
            },
            "contained_in": self.contained_in,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ObjectInstance":
        st = d["state"]
        return cls(
            instance_id=d["instance_id"], category=d["category"],
            x=d["pose"][0], y=d["pose"][1], yaw=int(d["pose"][2]),
            z_base=d["z_base"], is_open=st["is_open"], is_on=st["is_on"],
            is_sliced=st["is_sliced"], temperature=st["temperature"],
            cleanliness=st["cleanliness"], contained_in=d["contained_in"],
        )


@dataclass
class AgentState:
    cell: Tuple[int, int]
    heading: int = 0
    camera_pitch: int = 0
    held: Optional[str] = None
    height: float = 0.9

    @property
    def xy(self) -> Tuple[float, float]:
        return cell_center(*self.cell)

    def to_json(self) -> dict:
        return {"cell": list(self.cell), "heading": self.heading,
                "camera_pitch": self.camera_pitch, "held": self.held,
                "height": self.height}


@dataclass
class SceneSpec:
    room_id: str
    width: float
    depth: float
    wall_segments: List[Tuple[float, float, float, float]]  # (xmin, xmax, ymin, ymax)
    objects: List[ObjectInstance]
    split_tag: str
    template_id: str = ""
    agent_start: Tuple[int, int, int] = (0, 0, 0)  # (i, j, heading)

    @property
    def grid_shape(self) -> Tuple[int, int]:
        return int(round(self.width / PITCH)), int(round(self.depth / PITCH))

    def instances_of(self, category: str) -> List[ObjectInstance]:
        return [o for o in self.objects if o.category == category]

    def by_id(self, instance_id: str) -> ObjectInstance:
        for o in self.objects:
            if o.instance_id == instance_id:
                return o
        raise KeyError(instance_id)

    def to_json(self) -> dict:
        return {
            "schema": SCENE_SCHEMA,
            "room_id": self.room_id,
            "template_id": self.template_id,
            "split_tag": self.split_tag,
            "width": self.width, "depth": self.depth,
            "wall_segments": [list(w) for w in self.wall_segments],
            "agent_start": list(self.agent_start),
            "objects": [o.to_json() for o in self.objects],
        }

    @classmethod
    def from_json(cls, d: dict) -> "SceneSpec":
        if d.get("schema") != SCENE_SCHEMA:
            raise ValueError(f"unsupported scene schema: {d.get('schema')!r}")
        return cls(
            room_id=d["room_id"], width=d["width"], depth=d["depth"],
            wall_segments=[tuple(w) for w in d["wall_segments"]],
            objects=[ObjectInstance.from_json(o) for o in d["objects"]],
            split_tag=d["split_tag"], template_id=d.get("template_id", ""),
            agent_start=tuple(d["agent_start"]),
        )


@dataclass(frozen=True)
class GoalCondition:
    """One predicate over the final world state.

    pred is one of:
      contained  - at least min_count instances of `category` directly inside/on
                   an instance of `receptacle`
      state_eq   - some instance of `category` has state `state_field` == value
      held       - the agent holds an instance of `category`
    """
    pred: str
    category: str
    receptacle: Optional[str] = None
    min_count: int = 1
    state_field: Optional[str] = None
    value: object = None

    def to_json(self) -> dict:
        d = {"pred": self.pred, "category": self.category}
        if self.pred == "contained":
            d["receptacle"] = self.receptacle
            d["min_count"] = self.min_count
        elif self.pred == "state_eq":
            d["field"] = self.state_field
            d["value"] = self.value
        return d

    @classmethod
    def from_json(cls, d: dict) -> "GoalCondition":
        return cls(pred=d["pred"], category=d["category"],
                   receptacle=d.get("receptacle"), min_count=d.get("min_count", 1),
                   state_field=d.get("field"), value=d.get("value"))


@dataclass
class TaskSpec:
    task_type: str
    target_category: str
    receptacle_category: str
    intermediate_category: Optional[str] = None
    sliced: bool = False
    goal_conditions: List[GoalCondition] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "schema": TASK_SCHEMA,
            "task_type": self.task_type,
            "target_category": self.target_category,
            "receptacle_category": self.receptacle_category,
            "intermediate_category": self.intermediate_category,
            "sliced": self.sliced,
            "goal_conditions": [g.to_json() for g in self.goal_conditions],
        }

    @classmethod
    def from_json(cls, d: dict) -> "TaskSpec":
        if d.get("schema") != TASK_SCHEMA:
            raise ValueError(f"unsupported task schema: {d.get('schema')!r}")
        return cls(
            task_type=d["task_type"], target_category=d["target_category"],
            receptacle_category=d["receptacle_category"],
            intermediate_category=d.get("intermediate_category"),
            sliced=d.get("sliced", False),
            goal_conditions=[GoalCondition.from_json(g) for g in d["goal_conditions"]],
        )


def static_passable_grid(scene: SceneSpec) -> np.ndarray:
    """Ground-truth passability: True where the agent may stand.

    Walls and non-pickupable object footprints block; items never block.
    """
    nx, ny = scene.grid_shape
    passable = np.ones((nx, ny), dtype=bool)
    eps = 1e-9
    boxes = [w for w in scene.wall_segments]
    boxes += [o.footprint() for o in scene.objects if not o.info.pickupable]
    for x0, x1, y0, y1 in boxes:
        i0 = max(0, int(math.floor((x0 + eps) / PITCH)))
        i1 = min(nx - 1, int(math.ceil((x1 - eps) / PITCH)) - 1)
        j0 = max(0, int(math.floor((y0 + eps) / PITCH)))
        j1 = min(ny - 1, int(math.ceil((y1 - eps) / PITCH)) - 1)
        if i1 >= i0 and j1 >= j0:
            passable[i0:i1 + 1, j0:j1 + 1] = False
    return passable


def containment_chain(scene: SceneSpec, inst: ObjectInstance) -> List[str]:
    """Instance ids from inst upward through contained_in; raises on cycles."""
    chain, seen = [], set()
    cur = inst
    while cur.contained_in is not None:
        if cur.contained_in in seen:
            raise ValueError(f"containment cycle at {cur.contained_in}")
        seen.add(cur.contained_in)
        chain.append(cur.contained_in)
        cur = scene.by_id(cur.contained_in)
    return chain


def reachable_cells(passable: np.ndarray, start: Tuple[int, int]) -> np.ndarray:
    """4-connected flood fill from start over passable cells."""
    nx, ny = passable.shape
    seen = np.zeros_like(passable)
    if not passable[start]:
        return seen
    stack = [start]
    seen[start] = True
    while stack:
        i, j = stack.pop()
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ni, nj = i + di, j + dj
            if 0 <= ni < nx and 0 <= nj < ny and passable[ni, nj] and not seen[ni, nj]:
                seen[ni, nj] = True
                stack.append((ni, nj))
    return seen


def has_line_of_sight(passable: np.ndarray, a: Tuple[int, int], b: Tuple[int, int]) -> bool:
    """True if no blocked cell lies strictly between a and b."""
    cells = list(bresenham(a, b))
    return all(passable[c] for c in cells[1:-1])


def footprint_cells(obj: ObjectInstance, shape: Tuple[int, int]) -> List[Tuple[int, int]]:
    x0, x1, y0, y1 = obj.footprint()
    eps = 1e-9
    i0 = max(0, int(math.floor((x0 + eps) / PITCH)))
    i1 = min(shape[0] - 1, int(math.ceil((x1 - eps) / PITCH)) - 1)
    j0 = max(0, int(math.floor((y0 + eps) / PITCH)))
    j1 = min(shape[1] - 1, int(math.ceil((y1 - eps) / PITCH)) - 1)
    return [(i, j) for i in range(i0, i1 + 1) for j in range(j0, j1 + 1)]


def approach_cells(scene: SceneSpec, passable: np.ndarray, obj: ObjectInstance,
                   max_range: float = 1.5) -> List[Tuple[int, int]]:
    """Passable cells within interaction range of obj with line of sight to it.

    Neither the object's own footprint nor that of whatever supports it
    (its containment chain) occludes the sight line to its center.
    """
    nx, ny = passable.shape
    ocell = cell_of(obj.x, obj.y)
    los_grid = passable.copy()
    for c in footprint_cells(obj, passable.shape):
        los_grid[c] = True
    for holder_id in containment_chain(scene, obj):
        for c in footprint_cells(scene.by_id(holder_id), passable.shape):
            los_grid[c] = True
    out = []
    r_cells = int(math.ceil(max_range / PITCH)) + 1
    for i in range(max(0, ocell[0] - r_cells), min(nx, ocell[0] + r_cells + 1)):
        for j in range(max(0, ocell[1] - r_cells), min(ny, ocell[1] + r_cells + 1)):
            if not passable[i, j]:
                continue
            cx, cy = cell_center(i, j)
            if math.hypot(cx - obj.x, cy - obj.y) > max_range:
                continue
            if has_line_of_sight(los_grid, (i, j), ocell):
                out.append((i, j))
    return out


REQUIRED_RECEPTACLES = ("Microwave", "Fridge", "SinkBasin", "Faucet", "FloorLamp", "Table")


def validate_scene(scene: SceneSpec) -> List[str]:
    """Returns a list of invariant violations; empty means the scene is valid."""
    problems = []
    for o in scene.objects:
        x0, x1, y0, y1 = o.footprint()
        if x0 < -1e-9 or y0 < -1e-9 or x1 > scene.width + 1e-9 or y1 > scene.depth + 1e-9:
            problems.append(f"{o.instance_id} footprint outside room bounds")
        info = o.info
        if o.is_open and not info.openable:
            problems.append(f"{o.instance_id} is_open without openable affordance")
        if o.is_on and not info.toggleable:
            problems.append(f"{o.instance_id} is_on without toggleable affordance")
        if o.is_sliced and not info.sliceable:
            problems.append(f"{o.instance_id} is_sliced without sliceable affordance")
        if info.pickupable and info.extent[2] > AGENT_REACH:
            problems.append(f"{o.instance_id} taller than agent reach")
        try:
            containment_chain(scene, o)
        except ValueError as e:
            problems.append(str(e))

    present = {o.category for o in scene.objects}
    for cat in REQUIRED_RECEPTACLES:
        if cat not in present:
            problems.append(f"required category {cat} missing")

    passable = static_passable_grid(scene)
    start = scene.agent_start[:2]
    if not (0 <= start[0] < passable.shape[0] and 0 <= start[1] < passable.shape[1]) \
            or not passable[start]:
        problems.append("agent start not passable")
    else:
        reach = reachable_cells(passable, start)
        if reach.sum() < 2:
            problems.append("no free cell reachable from agent start")
        for o in scene.objects:
            if o.info.kind == "item":
                continue
            cells = approach_cells(scene, passable, o)
            if not any(reach[c] for c in cells):
                problems.append(f"{o.instance_id} unreachable within interaction range")
    return problems


def clone_objects(objects: List[ObjectInstance]) -> List[ObjectInstance]:
    return [replace(o) for o in objects]
