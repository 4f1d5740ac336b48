"""Deterministic manipulation macros: each manipulation sub-step type expands
into a fixed atomic-action template with named roles, executed with freshly
selected pixel masks and a small look-around recovery.

The agent selects masks from its own (possibly noise-corrupted) view; the
simulator re-resolves them against ground truth, which is where segmentation
error turns into failed interactions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .catalog import CATALOG, CATEGORY_IDS
from .perception import Observation, backproject
from .world import ActionOutcome, AtomicAction

MANIPULATION_TYPES = ("PickupObject", "PutObject", "HeatObject", "CoolObject",
                      "CleanObject", "SliceObject", "ToggleObject", "ExamineObject")

ROLES = ("target_object", "appliance", "receptacle", "fixture")


@dataclass(frozen=True)
class MacroStep:
    kind: str
    role: str


@dataclass(frozen=True)
class ActionMacro:
    substep_type: str
    template: Tuple[MacroStep, ...]


_T, _A, _R, _F = "target_object", "appliance", "receptacle", "fixture"

_MACROS: Dict[str, Tuple[MacroStep, ...]] = {
    "PickupObject": (MacroStep("PickUp", _T),),
    "PutObject": (MacroStep("Put", _R),),
    "HeatObject": (MacroStep("Open", _A), MacroStep("Put", _A), MacroStep("Close", _A),
                   MacroStep("ToggleOn", _A), MacroStep("ToggleOff", _A),
                   MacroStep("Open", _A), MacroStep("PickUp", _T), MacroStep("Close", _A)),
    "CoolObject": (MacroStep("Open", _A), MacroStep("Put", _A), MacroStep("Close", _A),
                   MacroStep("Open", _A), MacroStep("PickUp", _T), MacroStep("Close", _A)),
    "CleanObject": (MacroStep("Put", _A), MacroStep("ToggleOn", _F),
                    MacroStep("ToggleOff", _F), MacroStep("PickUp", _T)),
    "SliceObject": (MacroStep("Slice", _T),),
    "ToggleObject": (MacroStep("ToggleOn", _T),),
    "ExamineObject": (MacroStep("ToggleOn", _A),),
}


def macro_for(substep_type: str) -> ActionMacro:
    if substep_type not in _MACROS:
        raise ValueError(f"no manipulation macro for {substep_type!r}")
    return ActionMacro(substep_type, _MACROS[substep_type])


@dataclass
class BoundRole:
    category: str
    location: Optional[Tuple[float, float]] = None


@dataclass
class RoleBinding:
    roles: Dict[str, BoundRole]
    exclude_near: Tuple[Tuple[float, float], ...] = ()

    def __getitem__(self, role: str) -> BoundRole:
        return self.roles[role]

    def __contains__(self, role: str) -> bool:
        return role in self.roles


_EXCLUDE_RADIUS = 0.4


def _select_group(obs: Observation, category: str,
                  near: Optional[Tuple[float, float]] = None,
                  exclude_near: Sequence[Tuple[float, float]] = ()):
    label = CATEGORY_IDS[category]
    cat_mask = obs.labels == label
    if not cat_mask.any():
        return None
    ids = np.unique(obs.instances[cat_mask])
    groups = []
    for inst_id in ids:
        if inst_id < 0:
            g = cat_mask & (obs.instances < 0)
        else:
            g = cat_mask & (obs.instances == inst_id)
        if g.any():
            groups.append(g)
    cam = obs.camera
    rays = cam.rays()
    scored = []
    for g in groups:
        flat = g.reshape(-1)
        pts = cam.position[None, :2] + \
            obs.depth.reshape(-1)[flat, None] * rays[flat, :2]
        cx, cy = float(np.median(pts[:, 0])), float(np.median(pts[:, 1]))
        if any((cx - ex) ** 2 + (cy - ey) ** 2 < _EXCLUDE_RADIUS ** 2
               for ex, ey in exclude_near):
            continue
        area = int(g.sum())
        mean_depth = float(obs.depth[g].mean())
        scored.append((g, (cx, cy), area, mean_depth))
    if not scored:
        return None
    if near is not None:
        # instances of the wanted category near the expected spot are
        # interchangeable; among those, take the one easiest to reach
        close = [s for s in scored
                 if (s[1][0] - near[0]) ** 2 + (s[1][1] - near[1]) ** 2 <= 0.75 ** 2]
        if close:
            close.sort(key=lambda s: s[3])
            return close[0][0], close[0][1]
        scored.sort(key=lambda s: (s[1][0] - near[0]) ** 2 + (s[1][1] - near[1]) ** 2)
    else:
        scored.sort(key=lambda s: (-s[2], s[3]))
    return scored[0][0], scored[0][1]


def select_target_mask(obs: Observation, category: str,
                       near: Optional[Tuple[float, float]] = None,
                       exclude_near: Sequence[Tuple[float, float]] = ()
                       ) -> Optional[np.ndarray]:
    """Pixel mask for the best visible instance of a category, or None.

    Candidate pixel groups come from instance ids where available (pixels
    whose id noise destroyed form one extra group). Preference: nearest to
    `near` when given, else largest area with nearer mean depth as tie-break.
    Groups backprojecting next to an excluded location are skipped.
    """
    found = _select_group(obs, category, near, exclude_near)
    return None if found is None else found[0]


@dataclass
class ActionRecord:
    kind: str
    success: bool
    reason: str = ""
    category: str = ""                                 # role category acted on
    location: Optional[Tuple[float, float]] = None     # mask's backprojected median


@dataclass
class SubStepOutcome:
    substep_type: str
    success: bool
    reason: str = ""
    actions: List[ActionRecord] = field(default_factory=list)
    recoveries: int = 0

    def to_json(self) -> dict:
        return {"substep": self.substep_type, "success": self.success,
                "reason": self.reason, "recoveries": self.recoveries,
                "actions": [{"kind": a.kind, "success": a.success,
                             "reason": a.reason} for a in self.actions]}


StepFn = Callable[[AtomicAction], ActionOutcome]
ObserveFn = Callable[[], Observation]

# pitch sweep offsets tried by the look-around recovery, then up to 3 rotations
_RECOVERY_PITCH = ("LookDown", "LookUp", "LookUp", "LookDown")
_MAX_RECOVERY_ROTATIONS = 3


def _precondition_error(macro: ActionMacro, binding: RoleBinding,
                        held_category: Optional[str]) -> Optional[str]:
    st = macro.substep_type
    if st == "PickupObject" and held_category is not None:
        return "hands_full"
    if st == "PutObject" and held_category is None:
        return "not_holding"
    if st in ("HeatObject", "CoolObject", "CleanObject", "ExamineObject"):
        if held_category is None:
            return "not_holding"
        if _T in binding and held_category != binding[_T].category:
            return "wrong_object_held"
    if st == "SliceObject" and held_category != "Knife":
        return "no_knife"
    for step in macro.template:
        if step.role not in binding:
            return f"unbound_role:{step.role}"
    return None


def _expand(macro: ActionMacro, binding: RoleBinding) -> Tuple[MacroStep, ...]:
    # putting into a closed openable receptacle needs the door handled
    if macro.substep_type == "PutObject" and CATALOG[binding[_R].category].openable:
        return (MacroStep("Open", _R), MacroStep("Put", _R), MacroStep("Close", _R))
    return macro.template


def _search_mask(step_fn: StepFn, observe_fn: ObserveFn, category: str,
                 near, exclude_near, outcome: SubStepOutcome):
    found = _select_group(observe_fn(), category, near, exclude_near)
    if found is not None:
        return found
    outcome.recoveries += 1
    for kind in _RECOVERY_PITCH:
        out = step_fn(AtomicAction(kind))
        outcome.actions.append(ActionRecord(kind, out.success, out.reason))
        found = _select_group(observe_fn(), category, near, exclude_near)
        if found is not None:
            return found
    for _ in range(_MAX_RECOVERY_ROTATIONS):
        out = step_fn(AtomicAction("RotateRight"))
        outcome.actions.append(ActionRecord("RotateRight", out.success, out.reason))
        found = _select_group(observe_fn(), category, near, exclude_near)
        if found is not None:
            return found
    return None


def execute_macro(step_fn: StepFn, observe_fn: ObserveFn, macro: ActionMacro,
                  binding: RoleBinding,
                  held_category: Optional[str]) -> SubStepOutcome:
    """Run the macro's atomic actions with per-action mask selection.

    Preconditions are checked before anything is issued. Each atomic action
    gets one retry after mask re-selection; a second failure aborts the macro.
    """
    outcome = SubStepOutcome(macro.substep_type, success=False)
    err = _precondition_error(macro, binding, held_category)
    if err is not None:
        outcome.reason = f"precondition:{err}"
        return outcome

    appliance_loc = binding[_A].location if _A in binding else None
    for step in _expand(macro, binding):
        role = binding[step.role]
        near = role.location
        if step.role == _T and appliance_loc is not None:
            near = appliance_loc  # the target sits in/at the appliance by now
        done = False
        for attempt in (0, 1):
            found = _search_mask(step_fn, observe_fn, role.category, near,
                                 binding.exclude_near, outcome)
            if found is None:
                outcome.reason = f"not_visible:{role.category}"
                return outcome
            mask, loc = found
            out = step_fn(AtomicAction(step.kind, mask))
            outcome.actions.append(ActionRecord(step.kind, out.success, out.reason,
                                                category=role.category, location=loc))
            if out.success:
                done = True
                break
        if not done:
            outcome.reason = f"{step.kind}_failed:{outcome.actions[-1].reason}"
            return outcome
    outcome.success = True
    return outcome
