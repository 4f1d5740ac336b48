"""Procedural scenes, tasks, and step-by-step instructions.

Rooms come from a fixed set of layout templates; the valid_unseen split draws
from a template pool disjoint from the train/valid_seen pool. Furniture is
placed along the walls in template order, items on open surfaces, and every
generated scene passes the full invariant validator (bounded retries).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .catalog import CATALOG, display_form
from .geometry import HEADINGS, PITCH, cell_center
from .language import SubStep
from .scene import (GoalCondition, ObjectInstance, SceneSpec, TaskSpec,
                    static_passable_grid, validate_scene)
from .world import WorldState, check_goal_conditions

MAX_ATTEMPTS = 25

FURNITURE_ORDER_BASE = ("Table", "CounterTop", "Fridge", "SinkBasin", "Microwave",
                        "Cabinet", "Shelf", "Desk", "Sofa", "GarbageCan")
SURFACE_CATEGORIES = ("Table", "Desk", "CounterTop", "Shelf", "Sofa")

FOODS = ("Apple", "Bread", "Tomato", "Potato", "Egg", "Lettuce")
DISHES = ("Mug", "Cup", "Plate", "Bowl", "Pan", "Fork", "Spoon", "Knife")
EXAMINABLES = ("Book", "CellPhone", "KeyChain", "CreditCard")
CONTAINERS = ("Bowl", "Plate", "Pan")
SMALL_ITEMS = ("Egg", "Fork", "Spoon", "KeyChain", "CreditCard", "CellPhone",
               "Apple", "Tomato")
WASHABLES = ("Apple", "Tomato", "Potato", "Lettuce", "Mug", "Cup", "Plate",
             "Bowl", "Pan", "Fork", "Spoon", "Knife")
EXTRA_ITEM_POOL = ("Mug", "Cup", "CellPhone", "Book", "Bread", "Lettuce",
                   "Potato", "Egg", "Fork", "Spoon", "KeyChain", "CreditCard")


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class LayoutTemplate:
    template_id: str
    width: float
    depth: float
    order: Tuple[str, ...]        # perimeter placement order of the furniture
    start_wall: int               # 0=S, 1=E, 2=N, 3=W
    gap: float
    lamp_corner: int              # which interior corner hosts the floor lamp


def _rotated(seq: Sequence[str], k: int) -> Tuple[str, ...]:
    k %= len(seq)
    return tuple(seq[k:]) + tuple(seq[:k])


SEEN_TEMPLATES = (
    LayoutTemplate("T00", 5.0, 5.0, _rotated(FURNITURE_ORDER_BASE, 0), 0, 0.35, 2),
    LayoutTemplate("T01", 5.5, 4.75, _rotated(FURNITURE_ORDER_BASE, 3), 1, 0.30, 3),
    LayoutTemplate("T02", 4.75, 5.5, _rotated(FURNITURE_ORDER_BASE, 5), 2, 0.40, 0),
    LayoutTemplate("T03", 6.0, 4.5, _rotated(FURNITURE_ORDER_BASE, 7), 3, 0.35, 1),
    LayoutTemplate("T04", 5.25, 5.25, _rotated(FURNITURE_ORDER_BASE, 2), 0, 0.45, 1),
    LayoutTemplate("T05", 4.5, 5.75, _rotated(FURNITURE_ORDER_BASE, 8), 1, 0.30, 2),
    LayoutTemplate("T06", 5.75, 5.0, _rotated(FURNITURE_ORDER_BASE, 4), 2, 0.35, 3),
    LayoutTemplate("T07", 5.0, 6.0, _rotated(FURNITURE_ORDER_BASE, 6), 3, 0.40, 0),
)

UNSEEN_TEMPLATES = (
    LayoutTemplate("U00", 6.25, 5.25, _rotated(FURNITURE_ORDER_BASE[::-1], 0), 0, 0.45, 3),
    LayoutTemplate("U01", 4.75, 6.25, _rotated(FURNITURE_ORDER_BASE[::-1], 4), 2, 0.35, 0),
    LayoutTemplate("U02", 5.5, 5.5, _rotated(FURNITURE_ORDER_BASE[::-1], 7), 1, 0.40, 2),
    LayoutTemplate("U03", 6.5, 4.75, _rotated(FURNITURE_ORDER_BASE[::-1], 2), 3, 0.30, 1),
)

_SPLIT_CODE = {"train": 0, "valid_seen": 1, "valid_unseen": 2}


def template_pool(split: str) -> Tuple[LayoutTemplate, ...]:
    return UNSEEN_TEMPLATES if split == "valid_unseen" else SEEN_TEMPLATES


def _wall_segments(w: float, d: float) -> List[Tuple[float, float, float, float]]:
    t = PITCH
    return [(0.0, w, 0.0, t), (0.0, w, d - t, d),
            (0.0, t, t, d - t), (w - t, w, t, d - t)]


def _place_on_perimeter(template: LayoutTemplate, jitter: np.ndarray
                        ) -> Optional[List[ObjectInstance]]:
    """Walk the interior walls, dropping each furniture piece in template order."""
    w, d = template.width, template.depth
    t = PITCH
    corner_margin = 0.35
    # wall k: (start xy, tangent, normal into room, length, yaw)
    walls = [
        ((corner_margin, t), (1, 0), (0, 1), w - 2 * corner_margin, 0),
        ((w - t, corner_margin), (0, 1), (-1, 0), d - 2 * corner_margin, 90),
        ((w - corner_margin, d - t), (-1, 0), (0, -1), w - 2 * corner_margin, 180),
        ((t, d - corner_margin), (0, -1), (1, 0), d - 2 * corner_margin, 270),
    ]
    out: List[ObjectInstance] = []
    wall_k = template.start_wall
    cursor = 0.0
    counts: Dict[str, int] = {}
    for n, cat in enumerate(template.order):
        cw, cd, _ = CATALOG[cat].extent
        along, into = cw, cd
        j = float(jitter[n])
        placed = False
        for _ in range(4):
            (sx, sy), (tx, ty), (nx_, ny_), length, yaw = walls[wall_k]
            pos = cursor + max(0.0, j)
            if pos + along <= length:
                cx = sx + tx * (pos + along / 2) + nx_ * (into / 2)
                cy = sy + ty * (pos + along / 2) + ny_ * (into / 2)
                counts[cat] = counts.get(cat, 0) + 1
                out.append(ObjectInstance(
                    instance_id=f"{cat}_{counts[cat]}", category=cat,
                    x=cx, y=cy, yaw=yaw % 180 if CATALOG[cat].extent[0] != CATALOG[cat].extent[1] else 0))
                cursor = pos + along + template.gap
                placed = True
                break
            wall_k = (wall_k + 1) % 4
            cursor = 0.0
        if not placed:
            return None
    # yaw here only encodes which way the footprint is turned; fix up per wall
    return out


def _fix_yaws(instances: List[ObjectInstance], template: LayoutTemplate):
    # footprint() treats yaw % 180 == 90 as a w/d swap; E/W wall pieces need it
    for o in instances:
        near_ew = min(o.x, template.width - o.x) < min(o.y, template.depth - o.y)
        o.yaw = 90 if near_ew else 0


def _spot_on(rec: ObjectInstance, item_cat: str,
             placed: List[ObjectInstance]) -> Optional[Tuple[float, float]]:
    rx0, rx1, ry0, ry1 = rec.footprint()
    hw, hd, _ = CATALOG[item_cat].extent
    margin = 0.02
    x_lo, x_hi = rx0 + hw / 2 + margin, rx1 - hw / 2 - margin
    y_lo, y_hi = ry0 + hd / 2 + margin, ry1 - hd / 2 - margin
    if x_lo > x_hi or y_lo > y_hi:
        return None
    cx, cy = (x_lo + x_hi) / 2, (y_lo + y_hi) / 2
    candidates = [(cx, cy)]
    for fx in (-1.0, 1.0, -0.5, 0.5, 0.0):
        for fy in (0.0, -1.0, 1.0):
            candidates.append((cx + fx * (x_hi - x_lo) / 2, cy + fy * (y_hi - y_lo) / 2))
    others = [o for o in placed if o.contained_in == rec.instance_id]
    for px, py in candidates:
        ok = True
        for o in others:
            ow, od, _ = o.extent
            if abs(px - o.x) < (hw + ow) / 2 + 0.01 and abs(py - o.y) < (hd + od) / 2 + 0.01:
                ok = False
                break
        if ok:
            return px, py
    return None


def _choose_items(rng: np.random.Generator) -> List[str]:
    """Core guarantees every task type is generable; extras add variety."""
    food = FOODS[rng.integers(0, len(FOODS))]
    while food not in SMALL_ITEMS:  # the doubled food also serves as a stack target
        food = FOODS[rng.integers(0, len(FOODS))]
    items = [food, food, "Knife",
             EXAMINABLES[rng.integers(0, len(EXAMINABLES))],
             CONTAINERS[rng.integers(0, len(CONTAINERS))]]
    extras = [c for c in EXTRA_ITEM_POOL if c not in items]
    n_extra = int(rng.integers(3, 6))
    order = rng.permutation(len(extras))
    items.extend(extras[k] for k in order[:n_extra])
    return items


def generate_scene(seed: int, split: str) -> SceneSpec:
    """Deterministic scene for (seed, split); retries until invariants hold."""
    if seed < 0:
        raise ValueError("seed must be >= 0")
    if split not in _SPLIT_CODE:
        raise ValueError(f"unknown split {split!r}")
    pool = template_pool(split)
    template = pool[seed % len(pool)]
    last_problems: List[str] = []
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng([seed, _SPLIT_CODE[split], attempt, 0x5CE7E])
        scene = _assemble_scene(template, rng, seed, split, attempt)
        if scene is None:
            continue
        problems = validate_scene(scene)
        if not problems:
            return scene
        last_problems = problems
    raise GenerationError(
        f"no valid scene for seed={seed} split={split} after {MAX_ATTEMPTS} attempts; "
        f"last problems: {last_problems}")


def _assemble_scene(template: LayoutTemplate, rng: np.random.Generator,
                    seed: int, split: str, attempt: int) -> Optional[SceneSpec]:
    jitter_scale = 0.0 if attempt >= MAX_ATTEMPTS - 2 else 0.25
    jitter = rng.integers(-1, 2, size=len(template.order)) * jitter_scale
    furniture = _place_on_perimeter(template, jitter)
    if furniture is None:
        return None
    _fix_yaws(furniture, template)

    # fixtures: faucet rides on the sink's back edge, lamp stands in a corner
    sink = next(o for o in furniture if o.category == "SinkBasin")
    fx, fy = sink.x, sink.y
    shift = (sink.extent[1] if sink.yaw % 180 == 0 else sink.extent[0]) / 2 - 0.1
    to_wall = np.array([template.width / 2 - fx, template.depth / 2 - fy])
    ax = int(np.argmax(np.abs(to_wall)))
    off = [0.0, 0.0]
    off[ax] = -math.copysign(shift, to_wall[ax])
    furniture.append(ObjectInstance(
        instance_id="Faucet_1", category="Faucet", x=fx + off[0], y=fy + off[1],
        z_base=sink.top, contained_in=sink.instance_id))

    cw, cd = template.width, template.depth
    corners = [(0.8, 0.8), (cw - 0.8, 0.8), (cw - 0.8, cd - 0.8), (0.8, cd - 0.8)]
    lx, ly = corners[template.lamp_corner]
    furniture.append(ObjectInstance(instance_id="FloorLamp_1", category="FloorLamp",
                                    x=lx, y=ly))

    # items spawn on open surfaces so the exploration pass can see them
    objects = list(furniture)
    surfaces = [o for o in furniture if o.category in SURFACE_CATEGORIES]
    counts: Dict[str, int] = {}
    for cat in _choose_items(rng):
        order = rng.permutation(len(surfaces))
        spot = None
        for k in order:
            rec = surfaces[k]
            spot = _spot_on(rec, cat, objects)
            if spot is not None:
                counts[cat] = counts.get(cat, 0) + 1
                objects.append(ObjectInstance(
                    instance_id=f"{cat}_{counts[cat]}", category=cat,
                    x=spot[0], y=spot[1], z_base=rec.top,
                    contained_in=rec.instance_id))
                break
        if spot is None:
            return None

    scene = SceneSpec(
        room_id=f"{template.template_id}-{split}-{seed:05d}",
        width=template.width, depth=template.depth,
        wall_segments=_wall_segments(template.width, template.depth),
        objects=objects, split_tag=split, template_id=template.template_id,
    )
    passable = static_passable_grid(scene)
    free = np.argwhere(passable)
    clear = [tuple(c) for c in free
             if passable[max(0, c[0] - 1):c[0] + 2, max(0, c[1] - 1):c[1] + 2].all()]
    if not clear:
        return None
    start = clear[int(rng.integers(0, len(clear)))]
    heading = int(HEADINGS[rng.integers(0, 4)])
    scene.agent_start = (int(start[0]), int(start[1]), heading)
    return scene


# ---------------------------------------------------------------------------
# tasks

RECEPTACLE_POOLS = {
    "PickPlace": SURFACE_CATEGORIES + ("Fridge", "Cabinet", "GarbageCan", "SinkBasin"),
    "StackPlace": SURFACE_CATEGORIES + ("Fridge", "Cabinet", "GarbageCan"),
    "Pick2Place": SURFACE_CATEGORIES + ("Fridge", "Cabinet", "GarbageCan", "SinkBasin"),
    "HeatPlace": SURFACE_CATEGORIES + ("Cabinet", "GarbageCan", "SinkBasin"),
    "CoolPlace": SURFACE_CATEGORIES + ("Cabinet", "GarbageCan", "SinkBasin"),
    "CleanPlace": SURFACE_CATEGORIES + ("Fridge", "Cabinet", "GarbageCan"),
}

TARGET_POOLS = {
    "PickPlace": FOODS + DISHES + EXAMINABLES,
    "StackPlace": SMALL_ITEMS,
    "Pick2Place": FOODS,
    "HeatPlace": FOODS,
    "CoolPlace": FOODS + ("Mug",),
    "CleanPlace": WASHABLES,
    "Examine": EXAMINABLES,
}


def build_goal_conditions(task: TaskSpec) -> List[GoalCondition]:
    t, r = task.target_category, task.receptacle_category
    conds: List[GoalCondition] = []
    if task.sliced:
        conds.append(GoalCondition("state_eq", t, state_field="is_sliced", value=True))
    tt = task.task_type
    if tt == "PickPlace":
        conds.append(GoalCondition("contained", t, receptacle=r))
    elif tt == "StackPlace":
        conds.append(GoalCondition("contained", t, receptacle=task.intermediate_category))
        conds.append(GoalCondition("contained", task.intermediate_category, receptacle=r))
    elif tt == "Pick2Place":
        conds.append(GoalCondition("contained", t, receptacle=r, min_count=1))
        conds.append(GoalCondition("contained", t, receptacle=r, min_count=2))
    elif tt in ("HeatPlace", "CoolPlace", "CleanPlace"):
        field_value = {"HeatPlace": ("temperature", "hot"),
                       "CoolPlace": ("temperature", "cold"),
                       "CleanPlace": ("cleanliness", "clean")}[tt]
        conds.append(GoalCondition("state_eq", t, state_field=field_value[0],
                                   value=field_value[1]))
        conds.append(GoalCondition("contained", t, receptacle=r))
        if CATALOG[r].openable:
            conds.append(GoalCondition("state_eq", r, state_field="is_open", value=False))
    elif tt == "Examine":
        conds.append(GoalCondition("state_eq", "FloorLamp", state_field="is_on", value=True))
        conds.append(GoalCondition("held", t))
    else:
        raise ValueError(f"unknown task type {tt!r}")
    return conds


def generate_task(scene: SceneSpec, task_type: str, seed: int) -> TaskSpec:
    """Feasible task over the given scene, deterministic per seed."""
    rng = np.random.default_rng([seed, 0x7A5C])
    present = {o.category for o in scene.objects}
    if task_type == "Examine":
        choices = [c for c in TARGET_POOLS["Examine"] if c in present]
        if not choices:
            raise GenerationError("no examinable item in scene")
        target = choices[int(rng.integers(0, len(choices)))]
        task = TaskSpec("Examine", target, "FloorLamp")
        task.goal_conditions = build_goal_conditions(task)
        return task

    if task_type == "Pick2Place":
        counted: Dict[str, int] = {}
        for o in scene.objects:
            if o.category in TARGET_POOLS["Pick2Place"]:
                counted[o.category] = counted.get(o.category, 0) + 1
        choices = sorted(c for c, n in counted.items() if n >= 2)
    else:
        choices = sorted(c for c in set(TARGET_POOLS[task_type]) if c in present)
    if not choices:
        raise GenerationError(f"no feasible target for {task_type}")
    target = choices[int(rng.integers(0, len(choices)))]

    intermediate = None
    if task_type == "StackPlace":
        fits = [c for c in CONTAINERS if c in present
                and CATALOG[target].extent[0] <= CATALOG[c].extent[0] - 0.02
                and CATALOG[target].extent[1] <= CATALOG[c].extent[1] - 0.02]
        if not fits:
            raise GenerationError("no container fits the stack target")
        intermediate = fits[int(rng.integers(0, len(fits)))]

    initial_recs = {scene.by_id(o.contained_in).category
                    for o in scene.instances_of(target) if o.contained_in}
    pool = [c for c in RECEPTACLE_POOLS[task_type]
            if c in present and c not in initial_recs and c != intermediate]
    if not pool:
        raise GenerationError(f"no feasible receptacle for {task_type}")
    receptacle = pool[int(rng.integers(0, len(pool)))]

    sliced = bool(task_type in ("PickPlace", "HeatPlace", "CoolPlace")
                  and CATALOG[target].sliceable and "Knife" in present
                  and rng.random() < 0.25)

    task = TaskSpec(task_type, target, receptacle,
                    intermediate_category=intermediate, sliced=sliced)
    task.goal_conditions = build_goal_conditions(task)
    frac, done = check_goal_conditions(WorldState(scene, task), task)
    if done:
        raise GenerationError("task already satisfied in the fresh world")
    return task


# ---------------------------------------------------------------------------
# canonical decomposition and instruction text

def decompose_task(task: TaskSpec) -> List[SubStep]:
    """Ground-truth sub-step sequence the planner must reproduce exactly."""
    t, r = task.target_category, task.receptacle_category
    steps: List[SubStep] = []
    if task.sliced:
        steps += [SubStep("GotoLocation", "Knife"), SubStep("PickupObject", "Knife"),
                  SubStep("GotoLocation", t), SubStep("SliceObject", t),
                  SubStep("PutObject", "Table"),
                  SubStep("GotoLocation", t), SubStep("PickupObject", t)]
    else:
        steps += [SubStep("GotoLocation", t), SubStep("PickupObject", t)]
    tt = task.task_type
    if tt == "PickPlace":
        steps += [SubStep("GotoLocation", r), SubStep("PutObject", r)]
    elif tt == "HeatPlace":
        steps += [SubStep("HeatObject", t), SubStep("GotoLocation", r),
                  SubStep("PutObject", r)]
    elif tt == "CoolPlace":
        steps += [SubStep("CoolObject", t), SubStep("GotoLocation", r),
                  SubStep("PutObject", r)]
    elif tt == "CleanPlace":
        steps += [SubStep("CleanObject", t), SubStep("GotoLocation", r),
                  SubStep("PutObject", r)]
    elif tt == "Examine":
        steps += [SubStep("ExamineObject", t)]
    elif tt == "StackPlace":
        i = task.intermediate_category
        steps += [SubStep("GotoLocation", i), SubStep("PutObject", i),
                  SubStep("PickupObject", i), SubStep("GotoLocation", r),
                  SubStep("PutObject", r)]
    elif tt == "Pick2Place":
        steps += [SubStep("GotoLocation", r), SubStep("PutObject", r),
                  SubStep("GotoLocation", t), SubStep("PickupObject", t),
                  SubStep("GotoLocation", r), SubStep("PutObject", r)]
    else:
        raise ValueError(f"unknown task type {tt!r}")
    return steps


_SENTENCES = {
    "GotoLocation": ("walk to the {a}", "go to the {a}", "head to the {a}"),
    "PickupObject": ("pick up the {a}", "grab the {a}", "take the {a}"),
    "PutObject": ("put the {h} {p} the {a}", "place the {h} {p} the {a}",
                  "set the {h} {p} the {a}"),
    "HeatObject": ("heat the {a} in the microwave", "warm up the {a} in the microwave",
                   "cook the {a} in the microwave"),
    "CoolObject": ("cool the {a} in the fridge", "chill the {a} in the fridge",
                   "cool the {a} down in the fridge"),
    "CleanObject": ("wash the {a} in the sink", "clean the {a} in the sink",
                    "rinse the {a} in the sink"),
    "SliceObject": ("slice the {a} with the knife", "cut the {a} with the knife",
                    "cut up the {a} with the knife"),
    "ToggleObject": ("turn on the {a}", "switch on the {a}", "toggle the {a} on"),
    "ExamineObject": ("examine the {a} under the floor lamp",
                      "look at the {a} under the lamp",
                      "inspect the {a} under the lamp"),
}


def _surface(category: str, rng: np.random.Generator) -> str:
    from .catalog import SURFACE_FORMS
    forms = SURFACE_FORMS[category]
    return forms[int(rng.integers(0, len(forms)))]


def instruction_sentences(task: TaskSpec, seed: int) -> List[str]:
    """One sentence per canonical sub-step, with seeded surface variation."""
    rng = np.random.default_rng([seed, 0x1A57])
    sentences = []
    held: Optional[str] = None
    for step in decompose_task(task):
        template = _SENTENCES[step.action_type][int(rng.integers(0, 3))]
        arg = _surface(step.argument_category, rng)
        if step.action_type == "PutObject":
            prep = "in" if CATALOG[step.argument_category].cavity else "on"
            h = _surface(held, rng) if held else "it"
            sentences.append(template.format(a=arg, h=h, p=prep))
            held = None
        else:
            sentences.append(template.format(a=arg))
        if step.action_type == "PickupObject":
            held = step.argument_category
    return sentences


def goal_text(task: TaskSpec) -> str:
    t = display_form(task.target_category)
    r = display_form(task.receptacle_category)
    prep = "in" if CATALOG[task.receptacle_category].cavity else "on"
    slice_of = "slice of " if task.sliced else ""
    tt = task.task_type
    if tt == "PickPlace":
        return f"put a {slice_of}{t} {prep} the {r}"
    if tt == "StackPlace":
        i = display_form(task.intermediate_category)
        return f"put a {t} in a {i} and put the {i} {prep} the {r}"
    if tt == "Pick2Place":
        return f"put two {t}s {prep} the {r}"
    if tt == "HeatPlace":
        return f"put a warm {slice_of}{t} {prep} the {r}"
    if tt == "CoolPlace":
        return f"put a chilled {slice_of}{t} {prep} the {r}"
    if tt == "CleanPlace":
        return f"put a clean {t} {prep} the {r}"
    if tt == "Examine":
        return f"examine the {t} under the floor lamp"
    raise ValueError(tt)


def instruction_text(task: TaskSpec, seed: int) -> str:
    return ". ".join(instruction_sentences(task, seed)) + "."
