# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled event kernels. Must stay bit-compatible with ``_fallback.py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, floor, hypot
from libc.stdint cimport int8_t, int32_t, int64_t, uint16_t, uint8_t

cnp.import_array()


def last_polarity(const uint16_t[::1] x, const uint16_t[::1] y, const int8_t[::1] p,
                  Py_ssize_t width, Py_ssize_t height):
    out = np.zeros((height, width), dtype=np.int8)
    cdef int8_t[:, ::1] img = out
    cdef Py_ssize_t i, n = x.shape[0]
    with nogil:
        for i in range(n):
            img[y[i], x[i]] = p[i]
    return out


def polarity_counts(const uint16_t[::1] x, const uint16_t[::1] y, const int8_t[::1] p,
                    Py_ssize_t width, Py_ssize_t height):
    out = np.zeros((2, height, width), dtype=np.int32)
    cdef int32_t[:, :, ::1] c = out
    cdef Py_ssize_t i, n = x.shape[0]
    with nogil:
        for i in range(n):
            c[1 if p[i] < 0 else 0, y[i], x[i]] += 1
    return out


def time_surface(const uint16_t[::1] x, const uint16_t[::1] y, const int8_t[::1] p,
                 const int64_t[::1] t, int64_t t_start, int64_t t_end,
                 Py_ssize_t width, Py_ssize_t height):
    out = np.zeros((2, height, width), dtype=np.float32)
    cdef float[:, :, ::1] s = out
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double span = <double>(t_end - t_start)
    with nogil:
        for i in range(n):
            s[1 if p[i] < 0 else 0, y[i], x[i]] = <float>(<double>(t[i] - t_start) / span)
    return out


def rasterize(const double[:, ::1] segments, const int64_t[::1] counts,
              Py_ssize_t width, Py_ssize_t height):
    cdef Py_ssize_t m = counts.shape[0]
    cdef Py_ssize_t total = 0, j
    for j in range(m):
        total += counts[j]
    mask_arr = np.zeros(width * height, dtype=np.uint8)
    cdef uint8_t[::1] mask = mask_arr
    hits_arr = np.empty(total, dtype=np.int64)
    cdef int64_t[::1] hits = hits_arr
    cdef Py_ssize_t nhit = 0, k, n
    cdef double s, u, v, fx, fy, denom
    cdef int64_t idx
    with nogil:
        for j in range(m):
            n = counts[j]
            denom = <double>(n - 1 if n > 1 else 1)
            for k in range(n):
                s = <double>k / denom
                u = segments[j, 0] + s * (segments[j, 2] - segments[j, 0])
                v = segments[j, 1] + s * (segments[j, 3] - segments[j, 1])
                fx = floor(u + 0.5)
                fy = floor(v + 0.5)
                if fx < 0 or fx >= width or fy < 0 or fy >= height:
                    continue
                idx = <int64_t>fy * width + <int64_t>fx
                if mask[idx] == 0:
                    mask[idx] = 1
                    hits[nhit] = idx
                    nhit += 1
    return np.sort(hits_arr[:nhit])


cdef inline Py_ssize_t _draw(double u0, double v0, double u1, double v1, Py_ssize_t n,
                             Py_ssize_t width, Py_ssize_t height,
                             uint8_t[::1] mask, int64_t[::1] hits, Py_ssize_t nhit) noexcept nogil:
    cdef Py_ssize_t k
    cdef double s, u, v, fx, fy
    cdef double denom = <double>(n - 1 if n > 1 else 1)
    cdef int64_t idx
    for k in range(n):
        s = <double>k / denom
        u = u0 + s * (u1 - u0)
        v = v0 + s * (v1 - v0)
        fx = floor(u + 0.5)
        fy = floor(v + 0.5)
        if fx < 0 or fx >= width or fy < 0 or fy >= height:
            continue
        idx = <int64_t>fy * width + <int64_t>fx
        if mask[idx] == 0:
            mask[idx] = 1
            hits[nhit] = idx
            nhit += 1
    return nhit


def occupancy(const double[:, ::1] seg_cam, double fx, double fy, double cx, double cy,
              Py_ssize_t width, Py_ssize_t height, double z_near, double spacing):
    """Clip, project and rasterise camera-frame segments ``(m, 6)`` in one pass.

    Mirrors ``_fallback.occupancy`` operation for operation.
    """
    cdef Py_ssize_t m = seg_cam.shape[0], j, c, n
    cdef double ax, ay, az, bx, by, bz, fa, fb, nax, nay, naz, nbx, nby, nbz
    cdef double p0x, p0y, p1x, p1y, dx, dy, t0, t1, pk, qk, r
    cdef bint ok
    cdef double[:, ::1] seg2d = np.empty((m, 4), dtype=np.float64)
    cdef int64_t[::1] counts = np.empty(m, dtype=np.int64)
    cdef Py_ssize_t kept = 0
    cdef Py_ssize_t total = 0
    for j in range(m):
        ax = seg_cam[j, 0]; ay = seg_cam[j, 1]; az = seg_cam[j, 2]
        bx = seg_cam[j, 3]; by = seg_cam[j, 4]; bz = seg_cam[j, 5]
        if not (az >= z_near or bz >= z_near):
            continue
        fa = (z_near - az) / (bz - az) if az < z_near else 0.0
        fb = (z_near - bz) / (az - bz) if bz < z_near else 0.0
        nax = ax + fa * (bx - ax); nay = ay + fa * (by - ay); naz = az + fa * (bz - az)
        nbx = bx + fb * (ax - bx); nby = by + fb * (ay - by); nbz = bz + fb * (az - bz)
        p0x = fx * nax / naz + cx
        p0y = fy * nay / naz + cy
        p1x = fx * nbx / nbz + cx
        p1y = fy * nby / nbz + cy
        dx = p1x - p0x
        dy = p1y - p0y
        t0 = 0.0
        t1 = 1.0
        ok = True
        for c in range(4):
            if c == 0:
                pk = -dx; qk = p0x - (-1.0)
            elif c == 1:
                pk = dx; qk = width - p0x
            elif c == 2:
                pk = -dy; qk = p0y - (-1.0)
            else:
                pk = dy; qk = height - p0y
            if pk == 0:
                if qk < 0:
                    ok = False
            else:
                r = qk / pk
                if pk < 0:
                    t0 = t0 if t0 >= r else r
                else:
                    t1 = t1 if t1 <= r else r
        if not ok or not (t0 <= t1):
            continue
        seg2d[kept, 0] = p0x + t0 * dx
        seg2d[kept, 1] = p0y + t0 * dy
        seg2d[kept, 2] = p0x + t1 * dx
        seg2d[kept, 3] = p0y + t1 * dy
        counts[kept] = <int64_t>ceil(hypot(seg2d[kept, 2] - seg2d[kept, 0],
                                           seg2d[kept, 3] - seg2d[kept, 1]) / spacing) + 1
        total += counts[kept]
        kept += 1
    mask_arr = np.zeros(width * height, dtype=np.uint8)
    hits_arr = np.empty(total, dtype=np.int64)
    cdef uint8_t[::1] mask = mask_arr
    cdef int64_t[::1] hits = hits_arr
    cdef Py_ssize_t nhit = 0
    for j in range(kept):
        nhit = _draw(seg2d[j, 0], seg2d[j, 1], seg2d[j, 2], seg2d[j, 3], counts[j],
                     width, height, mask, hits, nhit)
    return np.sort(hits_arr[:nhit])


def sorted_difference(const int64_t[::1] a, const int64_t[::1] b):
    out_arr = np.empty(a.shape[0], dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    cdef Py_ssize_t i = 0, j = 0, k = 0, na = a.shape[0], nb = b.shape[0]
    with nogil:
        while i < na:
            while j < nb and b[j] < a[i]:
                j += 1
            if j >= nb or b[j] != a[i]:
                out[k] = a[i]
                k += 1
            i += 1
    return out_arr[:k]
