"""The fixed 30-category object catalog and the instruction synonym table.

Both ship as versioned JSON data files. Segmentation frames use integer labels:
0 = background, 1 = floor, 2 = wall, and 3 + catalog index for object categories.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Dict, List, Tuple

LABEL_BACKGROUND = 0
LABEL_FLOOR = 1
LABEL_WALL = 2
LABEL_CATEGORY_BASE = 3


@dataclass(frozen=True)
class CategoryInfo:
    name: str
    kind: str                      # furniture | fixture | item
    extent: Tuple[float, float, float]
    pickupable: bool = False
    receptacle: bool = False
    openable: bool = False
    toggleable: bool = False
    sliceable: bool = False
    cavity: bool = False           # contents go inside (vs. on top)


def _load_json(name: str) -> dict:
    with resources.files("gridhouse.data").joinpath(name).open() as f:
        return json.load(f)


def _build_catalog() -> Dict[str, CategoryInfo]:
    raw = _load_json("catalog.json")
    cats = {}
    for entry in raw["categories"]:
        cats[entry["name"]] = CategoryInfo(
            name=entry["name"],
            kind=entry["kind"],
            extent=tuple(entry["extent"]),
            pickupable=entry.get("pickupable", False),
            receptacle=entry.get("receptacle", False),
            openable=entry.get("openable", False),
            toggleable=entry.get("toggleable", False),
            sliceable=entry.get("sliceable", False),
            cavity=entry.get("cavity", False),
        )
    return cats


CATALOG: Dict[str, CategoryInfo] = _build_catalog()
CATEGORY_NAMES: List[str] = list(CATALOG.keys())
CATEGORY_IDS: Dict[str, int] = {n: LABEL_CATEGORY_BASE + i for i, n in enumerate(CATEGORY_NAMES)}
ID_CATEGORIES: Dict[int, str] = {v: k for k, v in CATEGORY_IDS.items()}

_SYN = _load_json("synonyms.json")
SURFACE_FORMS: Dict[str, List[str]] = _SYN["surface_forms"]
SUBSTITUTIONS: Dict[str, List[str]] = _SYN["substitutions"]

# surface token sequence -> category, longest sequences first
SURFACE_INDEX: Dict[Tuple[str, ...], str] = {}
for _cat, _forms in SURFACE_FORMS.items():
    for _form in _forms:
        SURFACE_INDEX[tuple(_form.split())] = _cat


def category_label(name: str) -> int:
    return CATEGORY_IDS[name]


def label_category(label: int) -> str:
    return ID_CATEGORIES[label]


def is_category_label(label: int) -> bool:
    return label >= LABEL_CATEGORY_BASE


def display_form(category: str) -> str:
    return SURFACE_FORMS[category][0]
