"""Egocentric frames, camera model, point-cloud backprojection, and sensor noise.

Depth frames store ray range in meters (distance along the pixel ray, not the
perpendicular z-depth), capped at the camera's max range.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from .catalog import LABEL_BACKGROUND
from .geometry import cell_center, ray_directions


@dataclass(frozen=True)
class CameraModel:
    cell: Tuple[int, int]
    heading: int
    pitch: int = 0
    height: float = 0.6
    fov_deg: float = 60.0
    frame_size: int = 64
    max_range: float = 5.0

    @property
    def position(self) -> np.ndarray:
        x, y = cell_center(*self.cell)
        return np.array([x, y, self.height])

    def rays(self) -> np.ndarray:
        """Unit direction per pixel, shape (F*F, 3), row-major."""
        return ray_directions(self.frame_size, self.fov_deg, self.heading, float(self.pitch))


@dataclass
class Observation:
    depth: np.ndarray      # (F, F) float32, ray range in meters
    labels: np.ndarray     # (F, F) int16 segmentation labels (see catalog)
    instances: np.ndarray  # (F, F) int32 index into the world's object list, -1 none
    camera: CameraModel

    def copy(self) -> "Observation":
        return Observation(self.depth.copy(), self.labels.copy(),
                           self.instances.copy(), self.camera)


@dataclass
class SemanticPointCloud:
    xyz: np.ndarray        # (N, 3): x, y, h in world meters
    labels: np.ndarray     # (N,) segmentation labels
    instances: np.ndarray  # (N,) object indices, -1 unknown

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def empty(cls) -> "SemanticPointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0, dtype=np.int16),
                   np.zeros(0, dtype=np.int32))


def backproject(obs: Observation, cam: Optional[CameraModel] = None) -> SemanticPointCloud:
    """World-frame labeled points: one per non-background pixel inside max range."""
    cam = cam or obs.camera
    f = cam.frame_size
    if obs.depth.shape != (f, f) or obs.labels.shape != (f, f):
        raise ValueError(f"frame shape {obs.depth.shape} does not match camera size {f}")
    depth = obs.depth.reshape(-1)
    labels = obs.labels.reshape(-1)
    insts = obs.instances.reshape(-1)
    keep = (labels != LABEL_BACKGROUND) & (depth < cam.max_range - 1e-6)
    # surfaces sit exactly on grid lines; nudging each point a millimeter
    # along its ray bins it into the solid it belongs to, not the free cell
    # in front of it
    pts = cam.position[None, :] + (depth[keep, None] + 1e-3) * cam.rays()[keep]
    # clip to the floor and snap float32 jitter to exactly 0 so the strict
    # 0 < h obstacle test never counts floor returns
    h = pts[:, 2]
    h[h < 0.005] = 0.0
    return SemanticPointCloud(pts, labels[keep].copy(), insts[keep].copy())


@dataclass(frozen=True)
class NoiseModel:
    """Parametric stand-in for learned depth/segmentation error."""
    depth_sigma: float = 0.0     # multiplicative gaussian std
    depth_dropout: float = 0.0   # fraction of pixels lost to max range
    seg_flip: float = 0.0        # per-pixel label flip rate
    seg_erosion: int = 0         # instance mask shrink radius, pixels

    @property
    def is_identity(self) -> bool:
        return (self.depth_sigma == 0.0 and self.depth_dropout == 0.0
                and self.seg_flip == 0.0 and self.seg_erosion == 0)

    @classmethod
    def none(cls) -> "NoiseModel":
        return cls()


# labels run 0..LABEL_CATEGORY_BASE+n_categories-1; flips draw uniformly from the others
def _flip_labels(labels: np.ndarray, flip_mask: np.ndarray, n_labels: int,
                 rng: np.random.Generator) -> np.ndarray:
    out = labels.copy()
    idx = np.flatnonzero(flip_mask.ravel())
    if idx.size:
        cur = out.ravel()[idx]
        draw = rng.integers(0, n_labels - 1, size=idx.size)
        draw = draw + (draw >= cur)
        out.ravel()[idx] = draw.astype(out.dtype)
    return out


def corrupt(obs: Observation, noise: NoiseModel, rng_seed: int) -> Observation:
    """Apply the noise model; deterministic per seed; identity when all rates are zero."""
    if noise.is_identity:
        return obs.copy()
    rng = np.random.default_rng(rng_seed)
    cam = obs.camera
    depth = obs.depth.copy()
    labels = obs.labels.copy()
    insts = obs.instances.copy()

    if noise.seg_erosion > 0:
        eroded = np.zeros_like(labels, dtype=bool)
        for inst_id in np.unique(insts):
            if inst_id < 0:
                continue
            mask = insts == inst_id
            shrunk = ndimage.binary_erosion(mask, iterations=noise.seg_erosion)
            eroded |= mask & ~shrunk
        labels[eroded] = LABEL_BACKGROUND
        insts[eroded] = -1

    if noise.seg_flip > 0:
        from .catalog import CATEGORY_NAMES, LABEL_CATEGORY_BASE
        n_labels = LABEL_CATEGORY_BASE + len(CATEGORY_NAMES)
        flip = rng.random(labels.shape) < noise.seg_flip
        labels = _flip_labels(labels, flip, n_labels, rng)
        insts[flip] = -1

    if noise.depth_sigma > 0:
        in_range = depth < cam.max_range - 1e-6
        factor = 1.0 + rng.normal(0.0, noise.depth_sigma, size=depth.shape)
        depth = np.where(in_range, np.clip(depth * factor, 0.01, cam.max_range), depth)
    if noise.depth_dropout > 0:
        drop = rng.random(depth.shape) < noise.depth_dropout
        depth = np.where(drop, cam.max_range, depth)

    return Observation(depth.astype(np.float32), labels, insts, cam)
