"""Shared world geometry: 0.25 m grid cells, cardinal headings, ray math.

Conventions used everywhere in this package:
  - world frame is right-handed, x/y on the floor plane, h up (meters)
  - heading 0 deg faces +x; 90 deg faces +y (counterclockwise from above)
  - cell (i, j) covers [i*PITCH, (i+1)*PITCH) x [j*PITCH, (j+1)*PITCH)
  - numpy grids are indexed [i, j] (shape (nx, ny))
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Iterator, Tuple

import numpy as np

PITCH = 0.25
HEADINGS = (0, 90, 180, 270)
CAM_PITCH_STEP = 15
CAM_PITCH_MIN = -60
CAM_PITCH_MAX = 60

Cell = Tuple[int, int]

_HEADING_VEC = {0: (1, 0), 90: (0, 1), 180: (-1, 0), 270: (0, -1)}


def heading_vector(heading: int) -> Cell:
    return _HEADING_VEC[heading % 360]


def cell_of(x: float, y: float, pitch: float = PITCH) -> Cell:
    return int(math.floor(x / pitch)), int(math.floor(y / pitch))


def cell_center(i: int, j: int, pitch: float = PITCH) -> Tuple[float, float]:
    return (i + 0.5) * pitch, (j + 0.5) * pitch


def rotate_heading(heading: int, quarter_turns_ccw: int) -> int:
    return (heading + 90 * quarter_turns_ccw) % 360


def heading_between(src_cell: Cell, dst_cell: Cell) -> int:
    """Cardinal heading from one cell toward a 4-adjacent cell."""
    di, dj = dst_cell[0] - src_cell[0], dst_cell[1] - src_cell[1]
    for h, vec in _HEADING_VEC.items():
        if vec == (np.sign(di), np.sign(dj)):
            return h
    raise ValueError(f"cells {src_cell} -> {dst_cell} are not axis-aligned")


def azimuth_deg(from_xy: Tuple[float, float], to_xy: Tuple[float, float], heading: int) -> float:
    """Signed angle (deg) of the target relative to the heading; +ccw, in (-180, 180]."""
    dx, dy = to_xy[0] - from_xy[0], to_xy[1] - from_xy[1]
    a = math.degrees(math.atan2(dy, dx)) - heading
    while a > 180.0:
        a -= 360.0
    while a <= -180.0:
        a += 360.0
    return a


def bresenham(a: Cell, b: Cell) -> Iterator[Cell]:
    """Cells on the segment from a to b, inclusive of both endpoints."""
    (x0, y0), (x1, y1) = a, b
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x1 > x0 else -1
    sy = 1 if y1 > y0 else -1
    err = dx + dy
    while True:
        yield x0, y0
        if (x0, y0) == (x1, y1):
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


@lru_cache(maxsize=256)
def ray_directions(frame_size: int, fov_deg: float, heading: int, pitch_deg: float) -> np.ndarray:
    """Unit ray directions for every pixel, shape (F*F, 3), row-major (row, col).

    Pixel (0, 0) is the top-left of the frame; +col points to the right of the
    heading, +row points down. Square pixels, pinhole model.
    """
    f = frame_size
    tan_half = math.tan(math.radians(fov_deg) / 2.0)
    u = (np.arange(f) + 0.5 - f / 2.0) / (f / 2.0) * tan_half   # right
    v = (f / 2.0 - (np.arange(f) + 0.5)) / (f / 2.0) * tan_half  # up
    uu, vv = np.meshgrid(u, v, indexing="xy")  # (rows, cols): vv varies by row

    th = math.radians(heading)
    ph = math.radians(pitch_deg)
    fwd = np.array([math.cos(th), math.sin(th), 0.0])
    right = np.array([math.sin(th), -math.cos(th), 0.0])
    up = np.array([0.0, 0.0, 1.0])
    fwd_p = fwd * math.cos(ph) + up * math.sin(ph)
    up_p = up * math.cos(ph) - fwd * math.sin(ph)

    dirs = (fwd_p[None, None, :]
            + uu[:, :, None] * right[None, None, :]
            + vv[:, :, None] * up_p[None, None, :])
    dirs = dirs.reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs.flags.writeable = False  # cached; callers must not mutate
    return dirs


def rle_encode(flat: np.ndarray) -> list:
    """Run-length encode a 1D integer array as [value, count, value, count, ...]."""
    flat = np.asarray(flat).ravel()
    if flat.size == 0:
        return []
    changes = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate(([0], changes))
    ends = np.concatenate((changes, [flat.size]))
    out: list = []
    for s, e in zip(starts, ends):
        out.extend((int(flat[s]), int(e - s)))
    return out


def rle_decode(rle: list, size: int, dtype=np.int64) -> np.ndarray:
    vals = np.array(rle[0::2], dtype=dtype)
    counts = np.array(rle[1::2], dtype=np.int64)
    out = np.repeat(vals, counts)
    if out.size != size:
        raise ValueError(f"RLE decodes to {out.size} values, expected {size}")
    return out
