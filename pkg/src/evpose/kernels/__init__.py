"""Hot event kernels with a compiled core and a numpy fallback.

The Cython extension ``_ckernels`` is used when it was built; otherwise (or when
``EVPOSE_PURE_PYTHON=1`` is set) the numpy fallback is selected at import time.
Both backends produce identical results.
"""

import os

import numpy as np

from . import _fallback as python_backend

try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and not os.environ.get("EVPOSE_PURE_PYTHON"):
    _active = compiled_backend
    BACKEND = "cython"
else:
    _active = python_backend
    BACKEND = "python"

_BACKENDS = {"python": python_backend, "cython": compiled_backend}
_DEFAULT = _active


def use_backend(name):
    """Switch the process-wide backend; ``None`` restores the import-time choice."""
    global _active
    _active = _DEFAULT if name is None else get_backend(name)


def get_backend(name=None):
    if name is None:
        return _active
    mod = _BACKENDS.get(name)
    if mod is None:
        raise RuntimeError(f"kernel backend {name!r} is not available")
    return mod


def available_backends():
    return [name for name, mod in _BACKENDS.items() if mod is not None]


def _cols(x, y, p):
    return (
        np.ascontiguousarray(x, dtype=np.uint16),
        np.ascontiguousarray(y, dtype=np.uint16),
        np.ascontiguousarray(p, dtype=np.int8),
    )


def last_polarity(x, y, p, width, height, backend=None):
    """int8 image holding the polarity of the latest event per pixel (0 where none)."""
    return get_backend(backend).last_polarity(*_cols(x, y, p), width, height)


def polarity_counts(x, y, p, width, height, backend=None):
    """int32 ``[2, H, W]`` event tallies; channel 0 positive, channel 1 negative."""
    return get_backend(backend).polarity_counts(*_cols(x, y, p), width, height)


def time_surface(x, y, p, t, t_start, t_end, width, height, backend=None):
    """float32 ``[2, H, W]`` normalised timestamp of the latest event per pixel and polarity."""
    t = np.ascontiguousarray(t, dtype=np.int64)
    return get_backend(backend).time_surface(
        *_cols(x, y, p), t, int(t_start), int(t_end), width, height
    )


def segment_sample_counts(segments, spacing=0.5):
    segments = np.asarray(segments, dtype=np.float64).reshape(-1, 4)
    length = np.hypot(segments[:, 2] - segments[:, 0], segments[:, 3] - segments[:, 1])
    return np.ceil(length / spacing).astype(np.int64) + 1


def rasterize(segments, width, height, spacing=0.5, backend=None):
    """Sorted linear pixel indices covered by 2D segments ``(u0, v0, u1, v1)``.

    Each segment is sampled at ``spacing`` pixels or finer; samples round to the
    nearest pixel centre.
    """
    segments = np.ascontiguousarray(segments, dtype=np.float64).reshape(-1, 4)
    counts = segment_sample_counts(segments, spacing)
    return get_backend(backend).rasterize(segments, counts, width, height)


def occupancy(seg_cam, fx, fy, cx, cy, width, height, z_near=0.05, spacing=0.5, backend=None):
    """Sorted linear pixel indices covered by camera-frame 3D segments ``(m, 2, 3)``.

    Segments are clipped to ``z >= z_near``, projected with the pinhole model,
    clipped to the sensor and rasterised.
    """
    seg = np.ascontiguousarray(seg_cam, dtype=np.float64).reshape(-1, 6)
    return get_backend(backend).occupancy(
        seg, float(fx), float(fy), float(cx), float(cy), int(width), int(height),
        float(z_near), float(spacing),
    )


def sorted_difference(a, b, backend=None):
    """Elements of sorted unique ``a`` that are not in sorted unique ``b``."""
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    return get_backend(backend).sorted_difference(a, b)
