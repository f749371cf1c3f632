"""The compiled and numpy kernel backends must agree exactly."""

import numpy as np
import pytest
from conftest import random_stream

from evpose import kernels, scene

pytestmark = pytest.mark.skipif(kernels.compiled_backend is None, reason="compiled extension not built")

BACKENDS = ("python", "cython")


def both(fn, *args, **kw):
    return [fn(*args, backend=b, **kw) for b in BACKENDS]


@pytest.mark.parametrize("seed", range(5))
def test_event_kernels_identical(seed):
    rng = np.random.default_rng(seed)
    s = random_stream(rng, n=3000, width=37, height=23)
    a, b = both(kernels.last_polarity, s.x, s.y, s.p, 37, 23)
    assert a.dtype == b.dtype and np.array_equal(a, b)
    a, b = both(kernels.polarity_counts, s.x, s.y, s.p, 37, 23)
    assert a.dtype == b.dtype and np.array_equal(a, b)
    t0, t1 = 0, int(s.t[-1]) + 1
    a, b = both(kernels.time_surface, s.x, s.y, s.p, s.t, t0, t1, 37, 23)
    assert a.dtype == b.dtype and np.array_equal(a, b)


def test_empty_inputs():
    e = np.zeros(0)
    for fn in (kernels.last_polarity, kernels.polarity_counts):
        a, b = both(fn, e, e, e, 5, 4)
        assert np.array_equal(a, b)


@pytest.mark.parametrize("seed", range(5))
def test_rasterize_identical(seed):
    rng = np.random.default_rng(seed)
    segs = rng.uniform(-20, 80, size=(30, 4))
    a, b = both(kernels.rasterize, segs, 64, 48)
    assert np.array_equal(a, b)
    assert np.all(np.diff(a) > 0)


@pytest.mark.parametrize("seed", range(5))
def test_occupancy_identical(seed):
    rng = np.random.default_rng(seed)
    cam = scene.CameraIntrinsics.default()
    model = scene.TargetModel.spacecraft()
    R = scene.rotation.to_matrix(scene.rotation.random_quaternion(rng))
    t = np.array([rng.uniform(-2, 2), rng.uniform(-1, 1), rng.uniform(0.3, 8)])
    seg = model.segments() @ R.T + t
    a, b = both(kernels.occupancy, seg, cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height)
    assert np.array_equal(a, b)


def test_sorted_difference_identical(rng):
    a = np.unique(rng.integers(0, 500, 300))
    b = np.unique(rng.integers(0, 500, 300))
    x, y = both(kernels.sorted_difference, a, b)
    assert np.array_equal(x, y)
    assert np.array_equal(x, np.setdiff1d(a, b))


def test_generated_streams_identical():
    traj = scene.Trajectory(np.array([0.9, 0.3, 0.2, 0.1]), np.array([0.1, 0.0, 5.0]),
                            omega=np.radians([20.0, -10.0, 5.0]), duration=0.3, seed=9)
    streams = []
    for b in BACKENDS:
        kernels.use_backend(b)
        try:
            streams.append(scene.generate_events(scene.TargetModel.spacecraft(), traj, scene.CameraIntrinsics.default()))
        finally:
            kernels.use_backend(None)
    assert len(streams[0]) > 0 and streams[0] == streams[1]


def test_backend_selection():
    assert kernels.BACKEND in kernels.available_backends()
    with pytest.raises(RuntimeError):
        kernels.get_backend("fortran")
