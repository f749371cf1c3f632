"""Vectorised numpy implementations of the event kernels.

Semantics match ``_ckernels.pyx`` bit for bit; the tests compare the two.
"""

import numpy as np


def _last_index_per_key(keys):
    # events are time-ordered, so the last occurrence of a key is the latest event
    rev = keys[::-1]
    uniq, first = np.unique(rev, return_index=True)
    return uniq, len(keys) - 1 - first


def last_polarity(x, y, p, width, height):
    img = np.zeros(height * width, dtype=np.int8)
    if len(x):
        keys = y.astype(np.int64) * width + x.astype(np.int64)
        uniq, last = _last_index_per_key(keys)
        img[uniq] = p[last]
    return img.reshape(height, width)


def polarity_counts(x, y, p, width, height):
    plane = height * width
    keys = (p < 0).astype(np.int64) * plane + y.astype(np.int64) * width + x.astype(np.int64)
    counts = np.bincount(keys, minlength=2 * plane).astype(np.int32)
    return counts.reshape(2, height, width)


def time_surface(x, y, p, t, t_start, t_end, width, height):
    plane = height * width
    out = np.zeros(2 * plane, dtype=np.float32)
    if len(x):
        keys = (p < 0).astype(np.int64) * plane + y.astype(np.int64) * width + x.astype(np.int64)
        uniq, last = _last_index_per_key(keys)
        span = float(t_end - t_start)
        v = (t[last] - t_start).astype(np.float64) / span
        out[uniq] = v.astype(np.float32)
    return out.reshape(2, height, width)


def rasterize(segments, counts, width, height):
    """Sorted unique linear indices of pixels touched by the sampled segments."""
    counts = np.asarray(counts, dtype=np.int64)
    if len(counts) == 0 or counts.sum() == 0:
        return np.zeros(0, dtype=np.int64)
    seg_id = np.repeat(np.arange(len(counts)), counts)
    starts = np.cumsum(counts) - counts
    k = np.arange(counts.sum(), dtype=np.int64) - starts[seg_id]
    denom = np.maximum(counts - 1, 1)[seg_id]
    s = k / denom
    seg = segments[seg_id]
    u = seg[:, 0] + s * (seg[:, 2] - seg[:, 0])
    v = seg[:, 1] + s * (seg[:, 3] - seg[:, 1])
    ix = np.floor(u + 0.5)
    iy = np.floor(v + 0.5)
    ok = (ix >= 0) & (ix < width) & (iy >= 0) & (iy < height)
    idx = iy[ok].astype(np.int64) * width + ix[ok].astype(np.int64)
    return np.unique(idx)


def clip_project(seg_cam, fx, fy, cx, cy, width, height, z_near):
    """Clip camera-frame segments ``(m, 6)`` to ``z >= z_near``, project, clip to the sensor box.

    Returns 2D segments ``(k, 4)``.
    """
    a, b = seg_cam[:, 0:3], seg_cam[:, 3:6]
    za, zb = a[:, 2], b[:, 2]
    keep = (za >= z_near) | (zb >= z_near)
    a, b, za, zb = a[keep], b[keep], za[keep], zb[keep]
    with np.errstate(divide="ignore", invalid="ignore"):
        fa = np.where(za < z_near, (z_near - za) / (zb - za), 0.0)
        fb = np.where(zb < z_near, (z_near - zb) / (za - zb), 0.0)
    a, b = a + fa[:, None] * (b - a), b + fb[:, None] * (a - b)
    p0 = np.column_stack([fx * a[:, 0] / a[:, 2] + cx, fy * a[:, 1] / a[:, 2] + cy])
    p1 = np.column_stack([fx * b[:, 0] / b[:, 2] + cx, fy * b[:, 1] / b[:, 2] + cy])
    # Liang-Barsky against [-1, width] x [-1, height]
    d = p1 - p0
    t0 = np.zeros(len(p0))
    t1 = np.ones(len(p0))
    ok = np.ones(len(p0), dtype=bool)
    for pk, qk in (
        (-d[:, 0], p0[:, 0] - (-1.0)),
        (d[:, 0], width - p0[:, 0]),
        (-d[:, 1], p0[:, 1] - (-1.0)),
        (d[:, 1], height - p0[:, 1]),
    ):
        parallel = pk == 0
        ok &= ~(parallel & (qk < 0))
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(parallel, 0.0, qk / pk)
        t0 = np.where(~parallel & (pk < 0), np.maximum(t0, r), t0)
        t1 = np.where(~parallel & (pk > 0), np.minimum(t1, r), t1)
    ok &= t0 <= t1
    q0 = p0 + t0[:, None] * d
    q1 = p0 + t1[:, None] * d
    return np.column_stack([q0, q1])[ok]


def sample_counts(seg2d, spacing):
    length = np.hypot(seg2d[:, 2] - seg2d[:, 0], seg2d[:, 3] - seg2d[:, 1])
    return np.ceil(length / spacing).astype(np.int64) + 1


def occupancy(seg_cam, fx, fy, cx, cy, width, height, z_near, spacing):
    seg2d = clip_project(seg_cam, fx, fy, cx, cy, width, height, z_near)
    return rasterize(seg2d, sample_counts(seg2d, spacing), width, height)


def sorted_difference(a, b):
    """Elements of sorted-unique ``a`` absent from sorted-unique ``b``."""
    return np.setdiff1d(a, b, assume_unique=True)
