"""Instruction parsing and plan generation: the human-reviewable expectation.

A deterministic verb-frame grammar compiles step-by-step instructions into an
ordered sub-step plan. The grammar is the default implementation behind a
pluggable planner port (any callable with the same signature can stand in,
e.g. a learned sequence model).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

from .catalog import CATALOG, SUBSTITUTIONS, SURFACE_INDEX

GRAMMAR_VERSION = 1
EXPECTATION_SCHEMA = "gridhouse.expectation/1"

ACTION_TYPES = ("GotoLocation", "PickupObject", "PutObject", "HeatObject",
                "CoolObject", "CleanObject", "SliceObject", "ToggleObject",
                "ExamineObject")

# action types whose macro operates at a fixed appliance rather than the argument
APPLIANCE_FOR = {
    "HeatObject": "Microwave",
    "CoolObject": "Fridge",
    "CleanObject": "SinkBasin",
    "ExamineObject": "FloorLamp",
}

FUNCTION_WORDS = {
    "the", "a", "an", "to", "up", "in", "on", "into", "inside", "onto", "with",
    "under", "at", "by", "down", "it", "and", "of", "over", "another", "second",
    "back", "its", "off", "then",
}

_FRAME_VERBS: Dict[str, Tuple[str, str]] = {}
for _verbs, _atype, _pick in (
    (("walk", "go", "head"), "GotoLocation", "first"),
    (("pick", "grab", "take"), "PickupObject", "first"),
    (("put", "place", "set"), "PutObject", "last"),
    (("heat", "warm", "cook"), "HeatObject", "first"),
    (("cool", "chill"), "CoolObject", "first"),
    (("wash", "clean", "rinse"), "CleanObject", "first"),
    (("slice", "cut"), "SliceObject", "first"),
    (("turn", "switch", "toggle"), "ToggleObject", "first"),
    (("examine", "look", "inspect"), "ExamineObject", "first"),
):
    for _v in _verbs:
        _FRAME_VERBS[_v] = (_atype, _pick)

_KNOWN_TOKENS: Set[str] = set(FUNCTION_WORDS) | set(_FRAME_VERBS)
for _form in SURFACE_INDEX:
    _KNOWN_TOKENS.update(_form)


class ParseError(ValueError):
    pass


class PlanningError(ValueError):
    """Raised when a sentence matches no verb frame or names no usable object."""

    def __init__(self, sentence: str, message: str):
        super().__init__(f"{message}: {sentence!r}")
        self.sentence = sentence


class EditError(ValueError):
    pass


@dataclass(frozen=True)
class SubStep:
    action_type: str
    argument_category: str

    def __post_init__(self):
        if self.action_type not in ACTION_TYPES:
            raise ValueError(f"unknown action type {self.action_type!r}")
        if self.argument_category not in CATALOG:
            raise ValueError(f"unknown category {self.argument_category!r}")

    def to_json(self) -> dict:
        return {"action": self.action_type, "argument": self.argument_category}

    @classmethod
    def from_json(cls, d: dict) -> "SubStep":
        return cls(d["action"], d["argument"])


@dataclass
class Instruction:
    goal_text: str
    steps: List[str]
    tokens: List[List[str]]


@dataclass(frozen=True)
class ScenePrior:
    """Categories known to exist in the current scene; conditions the planner."""
    categories: frozenset

    @classmethod
    def of(cls, categories) -> "ScenePrior":
        return cls(frozenset(categories))

    def __contains__(self, category: str) -> bool:
        return category in self.categories


@dataclass(frozen=True)
class Violation:
    index: int
    category: str
    message: str


@dataclass(frozen=True)
class Expectation:
    substeps: Tuple[SubStep, ...]
    provenance: str = "rule_based"            # rule_based | external_model | human_edited
    review_status: str = "pending"            # pending | approved | edited_approved | rejected
    notes: Tuple[str, ...] = ()
    history: Tuple[dict, ...] = ()
    grammar_version: int = GRAMMAR_VERSION

    def __post_init__(self):
        if len(self.substeps) < 1:
            raise ValueError("expectation must contain at least one sub-step")

    def to_json(self) -> dict:
        return {
            "schema": EXPECTATION_SCHEMA,
            "substeps": [s.to_json() for s in self.substeps],
            "provenance": self.provenance,
            "review_status": self.review_status,
            "notes": list(self.notes),
            "history": list(self.history),
            "grammar_version": self.grammar_version,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Expectation":
        if d.get("schema") != EXPECTATION_SCHEMA:
            raise ValueError(f"unsupported expectation schema: {d.get('schema')!r}")
        return cls(
            substeps=tuple(SubStep.from_json(s) for s in d["substeps"]),
            provenance=d["provenance"], review_status=d["review_status"],
            notes=tuple(d.get("notes", ())), history=tuple(d.get("history", ())),
            grammar_version=d.get("grammar_version", GRAMMAR_VERSION),
        )


_SENTENCE_SPLIT = re.compile(r"[.!?;\n]+")
_TOKEN = re.compile(r"[a-z0-9]+")


def parse_instruction(text: str) -> Instruction:
    """Tokenize raw instruction text into normalized per-sentence token streams."""
    if not text or not text.strip():
        raise ParseError("empty instruction")
    sentences = [s.strip() for s in _SENTENCE_SPLIT.split(text) if s.strip()]
    if not sentences:
        raise ParseError("no sentences in instruction")
    tokens = [_TOKEN.findall(s.lower()) for s in sentences]
    return Instruction(goal_text="", steps=sentences, tokens=tokens)


def extract_mentions(tokens: Sequence[str]) -> List[Tuple[int, str]]:
    """(position, category) for every surface-form mention, longest match first."""
    out = []
    i = 0
    while i < len(tokens):
        matched = False
        for ln in (3, 2, 1):
            seq = tuple(tokens[i:i + ln])
            if len(seq) == ln and seq in SURFACE_INDEX:
                out.append((i, SURFACE_INDEX[seq]))
                i += ln
                matched = True
                break
        if not matched:
            i += 1
    return out


def _plan_sentence(sentence: str, tokens: Sequence[str], prior: ScenePrior,
                   notes: List[str]) -> List[SubStep]:
    unknown = [t for t in tokens if t not in _KNOWN_TOKENS]
    if unknown:
        raise PlanningError(sentence, f"unknown tokens {unknown}")
    if not tokens or tokens[0] not in _FRAME_VERBS:
        raise PlanningError(sentence, "no verb frame matches")
    action_type, pick = _FRAME_VERBS[tokens[0]]
    mentions = extract_mentions(tokens)
    if not mentions:
        raise PlanningError(sentence, "no object mentioned")
    category = mentions[0][1] if pick == "first" else mentions[-1][1]
    if category not in prior:
        for candidate in SUBSTITUTIONS.get(category, []):
            if candidate in prior:
                notes.append(f"substituted {candidate} for {category} (not in scene)")
                category = candidate
                break
        else:
            raise PlanningError(sentence, f"{category} not in scene and no substitute")
    return [SubStep(action_type, category)]


def _insert_gotos(substeps: List[SubStep]) -> List[SubStep]:
    """A pickup must be preceded by arriving at its object; insert the missing goto."""
    out: List[SubStep] = []
    for s in substeps:
        if s.action_type == "PickupObject":
            prev = out[-1] if out else None
            at_object = prev is not None and prev.argument_category == s.argument_category \
                and prev.action_type in ("GotoLocation", "PutObject", "SliceObject")
            if not at_object:
                out.append(SubStep("GotoLocation", s.argument_category))
        out.append(s)
    return out


def plan_expectation(instruction: Instruction, prior: ScenePrior) -> Expectation:
    """Compile a parsed instruction into an expectation, conditioned on the scene prior.

    Pure function of (instruction, prior, grammar version): each sentence matches
    one verb frame; mentioned categories absent from the prior are substituted
    from the similarity table and the substitution recorded.
    """
    if not prior.categories:
        raise PlanningError("", "empty scene prior")
    notes: List[str] = []
    substeps: List[SubStep] = []
    for sentence, tokens in zip(instruction.steps, instruction.tokens):
        substeps.extend(_plan_sentence(sentence, tokens, prior, notes))
    substeps = _insert_gotos(substeps)
    return Expectation(substeps=tuple(substeps), provenance="rule_based",
                       notes=tuple(notes))


# the planner port: anything with this signature can replace the grammar
PlannerPort = Callable[[Instruction, ScenePrior], Expectation]


def validate_expectation(exp: Expectation, prior: ScenePrior) -> List[Violation]:
    """One violation per sub-step whose argument is not present in the scene."""
    out = []
    for i, s in enumerate(exp.substeps):
        if s.argument_category not in prior:
            out.append(Violation(i, s.argument_category,
                                 f"step {i}: {s.argument_category} not in scene"))
    return out


@dataclass(frozen=True)
class PlanEdit:
    op: str                       # insert | delete | replace
    index: int
    substep: Optional[SubStep] = None

    def to_json(self) -> dict:
        d = {"op": self.op, "index": self.index}
        if self.substep is not None:
            d["substep"] = self.substep.to_json()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PlanEdit":
        sub = SubStep.from_json(d["substep"]) if d.get("substep") else None
        return cls(op=d["op"], index=d["index"], substep=sub)


def apply_edit(exp: Expectation, edit: PlanEdit) -> Expectation:
    """Returns an edited copy; the original (kept in history) is never mutated."""
    if exp.review_status not in ("pending",):
        raise EditError(f"cannot edit a plan in state {exp.review_status!r}")
    steps = list(exp.substeps)
    if edit.op == "insert":
        if not 0 <= edit.index <= len(steps):
            raise EditError(f"insert index {edit.index} out of range")
        if edit.substep is None:
            raise EditError("insert requires a sub-step")
        steps.insert(edit.index, edit.substep)
    elif edit.op == "delete":
        if not 0 <= edit.index < len(steps):
            raise EditError(f"delete index {edit.index} out of range")
        if len(steps) == 1:
            raise EditError("edit would produce an empty plan")
        del steps[edit.index]
    elif edit.op == "replace":
        if not 0 <= edit.index < len(steps):
            raise EditError(f"replace index {edit.index} out of range")
        if edit.substep is None:
            raise EditError("replace requires a sub-step")
        steps[edit.index] = edit.substep
    else:
        raise EditError(f"unknown edit op {edit.op!r}")
    record = {"edit": edit.to_json(), "before": [s.to_json() for s in exp.substeps]}
    return replace(exp, substeps=tuple(steps), provenance="human_edited",
                   history=exp.history + (record,))


def set_review_status(exp: Expectation, status: str) -> Expectation:
    if status not in ("approved", "edited_approved", "rejected"):
        raise ValueError(f"invalid review status {status!r}")
    if exp.review_status != "pending":
        raise ValueError(f"review already finalized as {exp.review_status!r}")
    return replace(exp, review_status=status)
