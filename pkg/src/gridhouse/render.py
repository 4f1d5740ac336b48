"""Ground-truth egocentric rendering by raycasting the scene's boxes.

Every object is an axis-aligned box. Open cavity receptacles (an open fridge,
a sink basin) are transparent to rays that go on to hit something inside them,
so contained objects are visible; rays that cross the cavity without hitting
contents show the receptacle itself.
"""

from __future__ import annotations

from typing import List, Optional, Set, Tuple

import numpy as np

from .catalog import CATEGORY_IDS, LABEL_BACKGROUND, LABEL_FLOOR, LABEL_WALL
from .perception import CameraModel, Observation
from .scene import WALL_HEIGHT, SceneSpec

_EPS = 1e-6


def hidden_instance_indices(scene: SceneSpec, held: Optional[str]) -> Set[int]:
    """Indices of objects that must not render: the held stack and closed-cavity contents."""
    hidden: Set[int] = set()
    by_id = {o.instance_id: k for k, o in enumerate(scene.objects)}

    def hide_with_contents(iid: str):
        k = by_id[iid]
        if k in hidden:
            return
        hidden.add(k)
        for o in scene.objects:
            if o.contained_in == iid:
                hide_with_contents(o.instance_id)

    if held is not None:
        hide_with_contents(held)
    for o in scene.objects:
        info = o.info
        if info.cavity and info.openable and not o.is_open:
            for inner in scene.objects:
                if inner.contained_in == o.instance_id:
                    hide_with_contents(inner.instance_id)
    return hidden


def _gather_boxes(scene: SceneSpec, held: Optional[str]):
    hidden = hidden_instance_indices(scene, held)
    solid_boxes, solid_labels, solid_insts = [], [], []
    pass_boxes, pass_labels, pass_insts = [], [], []
    for k, o in enumerate(scene.objects):
        if k in hidden:
            continue
        info = o.info
        box = o.box3d()
        label = CATEGORY_IDS[o.category]
        passthrough = info.cavity and (not info.openable or o.is_open)
        if passthrough:
            pass_boxes.append(box)
            pass_labels.append(label)
            pass_insts.append(k)
        else:
            solid_boxes.append(box)
            solid_labels.append(label)
            solid_insts.append(k)
    for x0, x1, y0, y1 in scene.wall_segments:
        solid_boxes.append((x0, x1, y0, y1, 0.0, WALL_HEIGHT))
        solid_labels.append(LABEL_WALL)
        solid_insts.append(-1)
    return (np.array(solid_boxes, dtype=float).reshape(-1, 6), np.array(solid_labels),
            np.array(solid_insts), np.array(pass_boxes, dtype=float).reshape(-1, 6),
            np.array(pass_labels), np.array(pass_insts))


def _ray_box_intervals(origin: np.ndarray, inv_dirs: np.ndarray, boxes: np.ndarray):
    """Entry/exit distances per (ray, box); inf where missed."""
    tmin = None
    tmax = None
    for axis, (lo_col, hi_col) in enumerate(((0, 1), (2, 3), (4, 5))):
        inv = inv_dirs[:, axis:axis + 1]
        t_lo = (boxes[None, :, lo_col] - origin[axis]) * inv
        t_hi = (boxes[None, :, hi_col] - origin[axis]) * inv
        near = np.fmin(t_lo, t_hi)
        far = np.fmax(t_lo, t_hi)
        tmin = near if tmin is None else np.fmax(tmin, near)
        tmax = far if tmax is None else np.fmin(tmax, far)
    miss = (tmax < tmin) | (tmax < _EPS) | (tmin < _EPS)
    tmin = np.where(miss, np.inf, tmin)
    tmax = np.where(miss, np.inf, tmax)
    return tmin, tmax


def render_frames(scene: SceneSpec, camera: CameraModel, held: Optional[str]) -> Observation:
    f = camera.frame_size
    origin = camera.position.astype(np.float32)
    dirs = camera.rays()
    n = dirs.shape[0]
    with np.errstate(divide="ignore"):
        inv_dirs = (1.0 / dirs).astype(np.float32)

    sboxes, slabels, sinsts, pboxes, plabels, pinsts = _gather_boxes(scene, held)
    sboxes = sboxes.astype(np.float32)
    pboxes = pboxes.astype(np.float32)

    t_solid = np.full(n, np.inf, dtype=np.float32)
    lab = np.full(n, LABEL_BACKGROUND, dtype=np.int16)
    inst = np.full(n, -1, dtype=np.int32)

    if len(sboxes):
        tmin, _ = _ray_box_intervals(origin, inv_dirs, sboxes)
        k = np.argmin(tmin, axis=1)
        t_solid = tmin[np.arange(n), k]
        hit = np.isfinite(t_solid)
        lab[hit] = slabels[k[hit]]
        inst[hit] = sinsts[k[hit]]

    # floor plane at h=0
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_floor = np.where(dz < -1e-12, -origin[2] / dz, np.inf)
    floor_wins = t_floor < t_solid
    t_solid = np.where(floor_wins, t_floor, t_solid)
    lab[floor_wins] = LABEL_FLOOR
    inst[floor_wins] = -1

    if len(pboxes):
        tp_min, tp_max = _ray_box_intervals(origin, inv_dirs, pboxes)
        kp = np.argmin(tp_min, axis=1)
        tp1 = tp_min[np.arange(n), kp]
        tp2 = tp_max[np.arange(n), kp]
        cavity_wins = (tp1 < t_solid) & (t_solid > tp2 + _EPS)
        t_solid = np.where(cavity_wins, tp1, t_solid)
        lab[cavity_wins] = plabels[kp[cavity_wins]]
        inst[cavity_wins] = pinsts[kp[cavity_wins]]

    out_of_range = t_solid > camera.max_range - _EPS
    depth = np.where(out_of_range, camera.max_range, t_solid)
    lab[out_of_range] = LABEL_BACKGROUND
    inst[out_of_range] = -1

    return Observation(depth.reshape(f, f).astype(np.float32),
                       lab.reshape(f, f), inst.reshape(f, f), camera)
