import numpy as np
import pytest

from evpose import scene
from evpose.events import EventStream


@pytest.fixture
def cam():
    return scene.CameraIntrinsics.default()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_stream(rng, n=500, width=64, height=48, t_max=200_000):
    t = np.sort(rng.integers(0, t_max, size=n))
    return EventStream(
        width, height,
        rng.integers(0, width, size=n), rng.integers(0, height, size=n),
        rng.choice([-1, 1], size=n), t,
    )


@pytest.fixture
def small_stream(rng):
    return random_stream(rng)


def random_pose(rng, z_range=(4.0, 15.0)):
    from evpose import rotation

    z = rng.uniform(*z_range)
    xy = rng.uniform(-0.15, 0.15, 2) * z
    return scene.Pose(rotation.random_quaternion(rng), np.array([xy[0], xy[1], z]))


def cuboid_correspondences(pose, cam, model=None, noise=0.0, rng=None):
    from evpose import pnp

    model = model or scene.TargetModel.cuboid()
    uv, _ = scene.project(model.keypoints_3d, pose, cam)
    if noise:
        uv = uv + rng.normal(0.0, noise, uv.shape)
    return pnp.Correspondences(model.keypoints_3d, uv, cam)
