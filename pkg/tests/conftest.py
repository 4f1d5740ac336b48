import numpy as np
import pytest

from gridhouse.scene import ObjectInstance, SceneSpec


def make_room(width=4.0, depth=4.0, objects=(), start=(8, 8, 0), walls=True,
              extra_walls=()):
    """Hand-built scene for controlled tests; walls ring the room unless disabled."""
    t = 0.25
    segs = []
    if walls:
        segs = [(0.0, width, 0.0, t), (0.0, width, depth - t, depth),
                (0.0, t, t, depth - t), (width - t, width, t, depth - t)]
    segs += list(extra_walls)
    return SceneSpec(
        room_id="test-room", width=width, depth=depth, wall_segments=segs,
        objects=list(objects), split_tag="train", template_id="TEST",
        agent_start=start,
    )


def obj(instance_id, category, x, y, z_base=0.0, **state):
    return ObjectInstance(instance_id=instance_id, category=category,
                          x=x, y=y, z_base=z_base, **state)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
