"""Benchmark harness: dataset manifests, suite execution, SR/GC aggregation.

Episodes are fully self-contained manifest entries (scene, task, instruction,
seed), so suites parallelize trivially and reruns are byte-reproducible.
"""

from __future__ import annotations

import json
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .agent import EpisodeConfig, EpisodeTrace, run_episode, replay_trace
from .generate import (GenerationError, generate_scene, generate_task,
                       goal_text, instruction_text)
from .perception import NoiseModel
from .scene import SPLITS, TASK_TYPES, SceneSpec, TaskSpec

MANIFEST_SCHEMA = "gridhouse.manifest/1"
REPORT_SCHEMA = "gridhouse.report/1"

# noise presets mirror the ablation rows: which modality keeps ground truth
NOISE_PRESETS: Dict[str, NoiseModel] = {
    "gt_all": NoiseModel.none(),
    "gt_seg_only": NoiseModel(depth_sigma=0.05, depth_dropout=0.02),
    "gt_depth_only": NoiseModel(seg_flip=0.05, seg_erosion=1),
    "noisy_all": NoiseModel(depth_sigma=0.05, depth_dropout=0.02,
                            seg_flip=0.05, seg_erosion=1),
}

DISPLAY_NAMES = {
    "PickPlace": "Pick & Place", "StackPlace": "Stack & Place",
    "Pick2Place": "Pick 2 & Place", "HeatPlace": "Heat & Place",
    "CoolPlace": "Cool & Place", "CleanPlace": "Clean & Place",
    "Examine": "Examine",
}
TABLE_ROW_ORDER = ("Examine", "PickPlace", "StackPlace", "CleanPlace",
                   "CoolPlace", "HeatPlace", "Pick2Place")


@dataclass
class SuiteConfig:
    splits: Tuple[str, ...] = ("valid_seen", "valid_unseen")
    tasks_per_type: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.tasks_per_type < 1:
            raise ValueError("tasks_per_type must be >= 1")
        for s in self.splits:
            if s not in SPLITS:
                raise ValueError(f"unknown split {s!r}")

    def to_json(self) -> dict:
        return {"splits": list(self.splits), "tasks_per_type": self.tasks_per_type,
                "seed": self.seed}

    @classmethod
    def from_json(cls, d: dict) -> "SuiteConfig":
        return cls(splits=tuple(d.get("splits", ("valid_seen", "valid_unseen"))),
                   tasks_per_type=d.get("tasks_per_type", 10),
                   seed=d.get("seed", 0))


def generate_dataset(config: SuiteConfig) -> dict:
    """Episode manifest: per (type, split, index) a scene, task, and instruction."""
    episodes = []
    for si, split in enumerate(config.splits):
        for ti, task_type in enumerate(TASK_TYPES):
            for k in range(config.tasks_per_type):
                base = config.seed * 1000003 + si * 100003 + ti * 1009 + k
                scene = None
                task = None
                for attempt in range(10):  # infeasible pairings retry the scene
                    try:
                        scene = generate_scene(base + attempt * 7919, split)
                        task = generate_task(scene, task_type, base + attempt)
                        break
                    except GenerationError:
                        continue
                if task is None:
                    raise GenerationError(
                        f"could not pair {task_type} with a {split} scene "
                        f"(seed base {base})")
                episodes.append({
                    "episode_id": f"{split}-{task_type}-{k:03d}",
                    "split": split, "task_type": task_type, "index": k,
                    "seed": base,
                    "scene": scene.to_json(), "task": task.to_json(),
                    "goal": goal_text(task),
                    "instruction": instruction_text(task, base),
                })
    return {"schema": MANIFEST_SCHEMA, "config": config.to_json(),
            "episodes": episodes}


def load_manifest(path) -> dict:
    with open(path) as f:
        manifest = json.load(f)
    if manifest.get("schema") != MANIFEST_SCHEMA:
        raise ValueError(f"unsupported manifest schema {manifest.get('schema')!r}")
    return manifest


def run_manifest_episode(entry: dict, noise: NoiseModel,
                         seed_offset: int = 0) -> EpisodeTrace:
    scene = SceneSpec.from_json(entry["scene"])
    task = TaskSpec.from_json(entry["task"])
    config = EpisodeConfig(noise=noise, rng_seed=entry["seed"] + seed_offset)
    try:
        return run_episode(scene, task, entry["instruction"], config,
                           episode_id=entry["episode_id"])
    except Exception:
        trace = EpisodeTrace(episode_id=entry["episode_id"], scene=entry["scene"],
                             task=entry["task"], instruction=entry["instruction"],
                             seed=entry["seed"] + seed_offset)
        trace.abort_reason = "harness_error:" + traceback.format_exc(limit=3)
        return trace


def _worker(args) -> dict:
    entry, preset, seed_offset = args
    return run_manifest_episode(entry, NOISE_PRESETS[preset], seed_offset).to_json()


@dataclass
class MetricsReport:
    cells: Dict[Tuple[str, str], dict] = field(default_factory=dict)
    overall: Dict[str, dict] = field(default_factory=dict)
    noise_preset: str = "gt_all"
    seed_offset: int = 0
    episode_count: int = 0
    wall_clock: float = 0.0

    def check_invariants(self):
        for cell in list(self.cells.values()) + list(self.overall.values()):
            if not (0.0 <= cell["sr"] <= cell["gc"] <= 100.0 + 1e-9):
                raise AssertionError(f"SR <= GC violated: {cell}")

    def to_json(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "noise_preset": self.noise_preset,
            "seed_offset": self.seed_offset,
            "episode_count": self.episode_count,
            "wall_clock": self.wall_clock,
            "overall": self.overall,
            "cells": {f"{t}/{s}": c for (t, s), c in self.cells.items()},
        }

    @classmethod
    def from_json(cls, d: dict) -> "MetricsReport":
        r = cls(noise_preset=d["noise_preset"], seed_offset=d.get("seed_offset", 0),
                episode_count=d["episode_count"], wall_clock=d["wall_clock"],
                overall=d["overall"])
        for key, cell in d["cells"].items():
            t, s = key.split("/")
            r.cells[(t, s)] = cell
        return r

    def text_table(self) -> str:
        # absolute numbers are specific to this desk-scale world and are not
        # comparable with any published benchmark results
        splits = sorted({s for _, s in self.cells})
        lines = [
            "Desk-scale benchmark results "
            f"(noise={self.noise_preset}, {self.episode_count} episodes).",
            "Numbers are NOT comparable to any published benchmark.",
            "",
        ]
        header = f"{'Task Type':<16s}"
        for s in splits:
            tag = "Seen" if s == "valid_seen" else ("Unseen" if s == "valid_unseen"
                                                    else s)
            header += f" | {tag + ' SR':>9s} {tag + ' GC':>9s}"
        lines.append(header)
        lines.append("-" * len(header))

        def row(name, cells_by_split):
            line = f"{name:<16s}"
            for s in splits:
                c = cells_by_split.get(s)
                if c is None:
                    line += f" | {'-':>9s} {'-':>9s}"
                else:
                    line += f" | {c['sr']:>9.2f} {c['gc']:>9.2f}"
            return line

        lines.append(row("Overall", self.overall))
        for t in TABLE_ROW_ORDER:
            lines.append(row(DISPLAY_NAMES[t],
                             {s: self.cells.get((t, s)) for s in splits}))
        return "\n".join(lines) + "\n"


def aggregate(traces: List[EpisodeTrace], noise_preset: str,
              seed_offset: int = 0) -> MetricsReport:
    report = MetricsReport(noise_preset=noise_preset, seed_offset=seed_offset,
                           episode_count=len(traces))
    by_cell: Dict[Tuple[str, str], List[EpisodeTrace]] = {}
    by_split: Dict[str, List[EpisodeTrace]] = {}
    for tr in traces:
        task_type = tr.task["task_type"]
        split = tr.scene["split_tag"]
        by_cell.setdefault((task_type, split), []).append(tr)
        by_split.setdefault(split, []).append(tr)

    def stats(group: List[EpisodeTrace]) -> dict:
        n = len(group)
        sr = Fraction(sum(t.success for t in group), n)
        gc = sum((t.gc for t in group), Fraction(0)) / n
        return {"sr": float(sr * 100), "gc": float(gc * 100), "episodes": n}

    for key, group in by_cell.items():
        report.cells[key] = stats(group)
    for split, group in by_split.items():
        report.overall[split] = stats(group)
    report.check_invariants()
    return report


def run_suite(manifest: dict, noise_preset: str = "gt_all", seed_offset: int = 0,
              out_dir: Optional[Path] = None, workers: int = 1) -> MetricsReport:
    if noise_preset not in NOISE_PRESETS:
        raise ValueError(f"unknown noise preset {noise_preset!r}; "
                         f"choose from {sorted(NOISE_PRESETS)}")
    t0 = time.monotonic()
    entries = manifest["episodes"]
    jobs = [(e, noise_preset, seed_offset) for e in entries]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trace_dicts = list(pool.map(_worker, jobs, chunksize=1))
    else:
        trace_dicts = [_worker(j) for j in jobs]
    traces = [EpisodeTrace.from_json(d) for d in trace_dicts]
    report = aggregate(traces, noise_preset, seed_offset)
    report.wall_clock = time.monotonic() - t0

    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "traces").mkdir(parents=True, exist_ok=True)
        for d in trace_dicts:
            with open(out_dir / "traces" / f"{d['episode_id']}.json", "w") as f:
                json.dump(d, f)
        with open(out_dir / "report.json", "w") as f:
            json.dump(report.to_json(), f, indent=2)
        with open(out_dir / "report.txt", "w") as f:
            f.write(report.text_table())
    return report


def verify_replay(trace: EpisodeTrace) -> bool:
    """Re-simulate the trace and compare the final goal-condition outcome."""
    frac, success = replay_trace(trace)
    return (frac.numerator, frac.denominator) == tuple(trace.gc_fraction) \
        and success == trace.success
