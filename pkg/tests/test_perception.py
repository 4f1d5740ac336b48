"""Backprojection geometry and the parametric sensor-noise models."""

import math

import numpy as np
import pytest

from gridhouse.catalog import CATEGORY_IDS, LABEL_BACKGROUND
from gridhouse.generate import generate_scene
from gridhouse.perception import (CameraModel, NoiseModel, Observation,
                                  backproject, corrupt)
from gridhouse.world import AtomicAction, WorldConfig, WorldState

from conftest import make_room


def synthetic_obs(cam, depth_value=None, label=LABEL_BACKGROUND):
    f = cam.frame_size
    depth = np.full((f, f), cam.max_range, dtype=np.float32)
    labels = np.full((f, f), LABEL_BACKGROUND, dtype=np.int16)
    insts = np.full((f, f), -1, dtype=np.int32)
    if depth_value is not None:
        depth[:] = depth_value
        labels[:] = label
        insts[:] = 0
    return Observation(depth, labels, insts, cam)


class TestBackproject:
    def test_center_pixel_forward_ray(self):
        # odd frame size puts one pixel exactly on the camera axis
        cam = CameraModel(cell=(0, 0), heading=0, pitch=0, frame_size=65)
        obs = synthetic_obs(cam)
        obs.depth[32, 32] = 1.0
        obs.labels[32, 32] = CATEGORY_IDS["Apple"]
        cloud = backproject(obs)
        assert len(cloud) == 1
        x, y, h = cloud.xyz[0]
        # points carry a 1 mm along-ray nudge that bins them into the surface
        assert abs(x - (0.125 + 1.0)) < 2e-3
        assert abs(y - 0.125) < 2e-3
        assert abs(h - cam.height) < 2e-3

    def test_all_background_empty_cloud(self):
        cam = CameraModel(cell=(0, 0), heading=0)
        assert len(backproject(synthetic_obs(cam))) == 0

    def test_frame_size_mismatch(self):
        cam = CameraModel(cell=(0, 0), heading=0, frame_size=64)
        obs = synthetic_obs(cam)
        bad = CameraModel(cell=(0, 0), heading=0, frame_size=32)
        with pytest.raises(ValueError):
            backproject(obs, bad)

    def test_point_count_matches_in_range_pixels(self):
        scene = generate_scene(0, "train")
        world = WorldState(scene)
        obs = world.observe()
        cloud = backproject(obs)
        expect = int(((obs.labels != LABEL_BACKGROUND)
                      & (obs.depth < obs.camera.max_range - 1e-6)).sum())
        assert len(cloud) == expect

    def test_round_trip_against_scene_surfaces(self):
        # >= 99% of points within half a cell of a ground-truth surface
        from gridhouse.catalog import LABEL_FLOOR, LABEL_WALL, label_category
        from gridhouse.scene import WALL_HEIGHT
        scene = generate_scene(2, "train")
        world = WorldState(scene)
        total, close = 0, 0
        for _ in range(8):
            obs = world.observe()
            cloud = backproject(obs)
            for p, lab in zip(cloud.xyz, cloud.labels):
                total += 1
                lab = int(lab)
                if lab == LABEL_FLOOR:
                    d = abs(p[2])
                elif lab == LABEL_WALL:
                    d = min(_box_dist(p, (x0, x1, y0, y1, 0, WALL_HEIGHT))
                            for x0, x1, y0, y1 in scene.wall_segments)
                else:
                    d = min(_box_dist(p, o.box3d()) for o in scene.objects
                            if o.category == label_category(lab))
                close += d <= 0.125 + 1e-6
            world.step(AtomicAction("RotateLeft"))
            if world.agent.heading == 0:
                world.step(AtomicAction("MoveAhead"))
        assert total > 1000
        assert close / total >= 0.99


def _box_dist(p, box):
    x0, x1, y0, y1, z0, z1 = box
    lo = np.array([x0, y0, z0])
    hi = np.array([x1, y1, z1])
    outside = np.maximum(np.maximum(lo - p, 0.0), p - hi)
    d = float(np.linalg.norm(outside))
    if d > 0:
        return d
    return float(np.min(np.minimum(p - lo, hi - p)))


class TestCorrupt:
    def test_identity_when_no_noise(self):
        scene = generate_scene(0, "train")
        obs = WorldState(scene).observe()
        out = corrupt(obs, NoiseModel.none(), 7)
        assert (out.depth == obs.depth).all()
        assert (out.labels == obs.labels).all()
        assert (out.instances == obs.instances).all()

    def test_deterministic_per_seed(self):
        scene = generate_scene(0, "train")
        obs = WorldState(scene).observe()
        noise = NoiseModel(depth_sigma=0.05, depth_dropout=0.02,
                           seg_flip=0.05, seg_erosion=1)
        a = corrupt(obs, noise, 42)
        b = corrupt(obs, noise, 42)
        c = corrupt(obs, noise, 43)
        assert (a.depth == b.depth).all() and (a.labels == b.labels).all()
        assert not (a.labels == c.labels).all() or not (a.depth == c.depth).all()

    def test_full_flip_leaves_no_label_unchanged(self):
        scene = generate_scene(0, "train")
        obs = WorldState(scene).observe()
        out = corrupt(obs, NoiseModel(seg_flip=1.0), 3)
        assert (out.labels != obs.labels).all()

    def test_depth_error_matches_half_normal_mean(self):
        # |1+eps - 1| has mean sigma*sqrt(2/pi) ~= 0.0399 for sigma=0.05
        sigma = 0.05
        cam = CameraModel(cell=(0, 0), heading=0)
        errs = []
        for seed in range(6):
            rng = np.random.default_rng(seed)
            obs = synthetic_obs(cam, label=CATEGORY_IDS["Apple"])
            obs.depth[:] = rng.uniform(1.0, 3.0, size=obs.depth.shape)
            out = corrupt(obs, NoiseModel(depth_sigma=sigma), 100 + seed)
            errs.append(np.abs(out.depth / obs.depth - 1.0).mean())
        mean_err = float(np.mean(errs))
        expected = sigma * math.sqrt(2 / math.pi)
        assert abs(mean_err - expected) / expected < 0.10

    def test_dropout_sends_pixels_to_max_range(self):
        cam = CameraModel(cell=(0, 0), heading=0)
        obs = synthetic_obs(cam, depth_value=2.0, label=CATEGORY_IDS["Apple"])
        out = corrupt(obs, NoiseModel(depth_dropout=0.5), 11)
        dropped = (out.depth == cam.max_range).mean()
        assert 0.4 < dropped < 0.6
        assert len(backproject(out)) < len(backproject(obs))

    def test_erosion_shrinks_instance_masks(self):
        scene = generate_scene(0, "train")
        obs = WorldState(scene).observe()
        out = corrupt(obs, NoiseModel(seg_erosion=1), 5)
        for k in np.unique(obs.instances):
            if k < 0:
                continue
            assert (out.instances == k).sum() <= (obs.instances == k).sum()
        assert (out.instances >= 0).sum() < (obs.instances >= 0).sum()
