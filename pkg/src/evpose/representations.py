"""Event-frame representations (E2F, 2D histogram, LNES), ROI cropping and EFR1 files."""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import EventFormatError, NoTargetError

E2F_BACKGROUND = 0.5


class ReprKind(enum.IntEnum):
    E2F = 0
    HIST2D = 1
    LNES = 2

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).upper().replace("_", "")
        aliases = {"E2F": cls.E2F, "HIST2D": cls.HIST2D, "2DHIST": cls.HIST2D, "LNES": cls.LNES}
        if key not in aliases:
            raise ValueError(f"unknown representation {name!r}")
        return aliases[key]

    @property
    def label(self):
        return {0: "E2F", 1: "Hist2D", 2: "LNES"}[int(self)]

    @property
    def channels(self):
        return 1 if self is ReprKind.E2F else 2


@dataclass(frozen=True)
class EventFrame:
    kind: ReprKind
    data: np.ndarray  # float32 [C, H, W]

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3 or data.shape[0] != self.kind.channels:
            raise ValueError(f"{self.kind.label} frame needs {self.kind.channels} channels, got {data.shape}")
        if data.size and not (data.min() >= 0.0 and data.max() <= 1.0):
            raise ValueError("frame values must be finite and within [0, 1]")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    def __eq__(self, other):
        if not isinstance(other, EventFrame):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.data, other.data)


def _dims(window, dims):
    if dims is None:
        return window.dims
    width, height = dims
    return int(width), int(height)


def build_e2f(window, dims=None):
    """Polarity of the latest event per pixel: 1.0 for +1, 0.0 for -1, 0.5 if silent."""
    width, height = _dims(window, dims)
    last = kernels.last_polarity(window.x, window.y, window.p, width, height)
    # -1, 0, +1 -> 0.0, 0.5, 1.0 exactly, in two vectorised passes
    data = np.empty((1, height, width), dtype=np.float32)
    np.multiply(last, np.float32(0.5), out=data[0], dtype=np.float32)
    data += np.float32(E2F_BACKGROUND)
    return EventFrame(ReprKind.E2F, data)


def event_counts(window, dims=None):
    """Raw per-pixel event tallies ``[2, H, W]`` (positive, negative) before normalisation."""
    width, height = _dims(window, dims)
    return kernels.polarity_counts(window.x, window.y, window.p, width, height)


def build_hist2d(window, dims=None):
    counts = event_counts(window, dims)
    peak = counts.reshape(2, -1).max(axis=1)
    data = np.zeros(counts.shape, dtype=np.float32)
    for c in range(2):
        if peak[c] > 0:
            # one pass: int32 -> float32 conversion fused with the division
            np.divide(counts[c], np.float32(peak[c]), out=data[c], dtype=np.float32)
    return EventFrame(ReprKind.HIST2D, data)


def build_lnes(window, dims=None):
    if window.t_end <= window.t_start:
        raise ValueError("LNES needs a window with t_end > t_start")
    width, height = _dims(window, dims)
    surf = kernels.time_surface(
        window.x, window.y, window.p, window.t, window.t_start, window.t_end, width, height
    )
    return EventFrame(ReprKind.LNES, surf)


_BUILDERS = {ReprKind.E2F: build_e2f, ReprKind.HIST2D: build_hist2d, ReprKind.LNES: build_lnes}


def build_frame(kind, window, dims=None):
    return _BUILDERS[ReprKind.parse(kind)](window, dims)


# ---------------------------------------------------------------------------
# ROI handling


@dataclass(frozen=True)
class Roi:
    """Integer pixel box, inclusive ``min`` and exclusive ``max``."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate ROI {self}")

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    def within(self, width, height):
        return 0 <= self.x_min and self.x_max <= width and 0 <= self.y_min and self.y_max <= height

    def to_list(self):
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class RoiAffine:
    """Per-axis map between sensor pixels and ROI-resized pixels.

    Pixel centres sit at integer coordinates in both frames:
    ``u_roi = (u - offset_x) / scale_x - 0.5`` with ``offset_x = x_min - 0.5``.
    """

    scale_x: float
    scale_y: float
    offset_x: float
    offset_y: float

    @classmethod
    def from_roi(cls, roi, out_size):
        return cls(roi.width / out_size, roi.height / out_size, roi.x_min - 0.5, roi.y_min - 0.5)

    @classmethod
    def identity(cls):
        return cls(1.0, 1.0, -0.5, -0.5)

    def to_roi(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        out = np.empty_like(pts)
        out[..., 0] = (pts[..., 0] - self.offset_x) / self.scale_x - 0.5
        out[..., 1] = (pts[..., 1] - self.offset_y) / self.scale_y - 0.5
        return out

    def to_sensor(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        out = np.empty_like(pts)
        out[..., 0] = (pts[..., 0] + 0.5) * self.scale_x + self.offset_x
        out[..., 1] = (pts[..., 1] + 0.5) * self.scale_y + self.offset_y
        return out


def _axis_taps(start, length, out_size, limit):
    scale = length / out_size
    src = start + (np.arange(out_size) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, limit - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, limit - 1)
    w = (src - i0).astype(np.float32)
    return i0, i1, w


def crop_resize(frame, roi, out_size):
    """Bilinear crop-and-resize of ``roi`` to ``out_size`` x ``out_size``.

    Returns ``(frame, affine)``; ``affine`` maps keypoints between sensor and output pixels.
    """
    if out_size < 2:
        raise ValueError("out_size must be >= 2")
    if not roi.within(frame.width, frame.height):
        raise ValueError(f"{roi} exceeds frame {frame.width}x{frame.height}")
    x0, x1, wx = _axis_taps(roi.x_min, roi.width, out_size, frame.width)
    y0, y1, wy = _axis_taps(roi.y_min, roi.height, out_size, frame.height)
    d = frame.data
    top = d[:, y0, :]
    bot = d[:, y1, :]
    wy_ = wy[None, :, None]
    rows = top + (bot - top) * wy_
    left = rows[:, :, x0]
    right = rows[:, :, x1]
    out = left + (right - left) * wx[None, None, :]
    np.clip(out, 0.0, 1.0, out=out)
    return EventFrame(frame.kind, out), RoiAffine.from_roi(roi, out_size)


def ground_truth_roi(keypoints_2d, margin, dims, min_side=2):
    """Square box around the projected keypoints, grown by ``margin`` per side and kept on-sensor."""
    width, height = (int(d) for d in dims)
    pts = np.asarray(keypoints_2d, dtype=np.float64).reshape(-1, 2)
    inside = (
        np.isfinite(pts).all(axis=1)
        & (pts[:, 0] >= 0) & (pts[:, 0] < width)
        & (pts[:, 1] >= 0) & (pts[:, 1] < height)
    )
    if not inside.any():
        raise NoTargetError("no keypoint lies inside the sensor")
    pts = pts[np.isfinite(pts).all(axis=1)]
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    ext = (hi - lo) * margin
    lo, hi = lo - ext, hi + ext
    x_min, y_min = math.floor(lo[0]), math.floor(lo[1])
    x_max, y_max = math.ceil(hi[0]), math.ceil(hi[1])
    side = max(x_max - x_min, y_max - y_min, min_side)
    dx, dy = side - (x_max - x_min), side - (y_max - y_min)
    x_min -= dx // 2
    x_max += dx - dx // 2
    y_min -= dy // 2
    y_max += dy - dy // 2
    x_min, x_max = _shift_into(x_min, x_max, width)
    y_min, y_max = _shift_into(y_min, y_max, height)
    return Roi(x_min, y_min, x_max, y_max)


def _shift_into(lo, hi, limit):
    if hi - lo >= limit:
        return 0, limit
    if lo < 0:
        hi, lo = hi - lo, 0
    if hi > limit:
        lo, hi = lo - (hi - limit), limit
    return lo, hi


# ---------------------------------------------------------------------------
# EFR1 serialisation

EFR_MAGIC = b"EFR1"
_EFR_HEADER = struct.Struct("<4sBBHH")


def frame_to_bytes(frame):
    header = _EFR_HEADER.pack(EFR_MAGIC, int(frame.kind), frame.channels, frame.height, frame.width)
    return header + frame.data.astype("<f4").tobytes()


def frame_from_bytes(buf, offset=0):
    """Decode one EFR1 record at ``offset``. Returns ``(frame, next_offset)``."""
    if len(buf) - offset < _EFR_HEADER.size:
        raise EventFormatError("truncated EFR1 header", offset)
    magic, kind, channels, height, width = _EFR_HEADER.unpack_from(buf, offset)
    if magic != EFR_MAGIC:
        raise EventFormatError(f"bad magic {magic!r}", offset)
    try:
        kind = ReprKind(kind)
    except ValueError:
        raise EventFormatError(f"unknown frame kind {kind}", offset + 4) from None
    if channels != kind.channels:
        raise EventFormatError(f"{kind.label} frame with {channels} channels", offset + 5)
    start = offset + _EFR_HEADER.size
    n = channels * height * width
    end = start + 4 * n
    if len(buf) < end:
        raise EventFormatError("truncated EFR1 payload", start)
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=start).reshape(channels, height, width)
    return EventFrame(kind, data.astype(np.float32)), end


def save_frames(frames, path):
    with open(path, "wb") as fh:
        for f in frames:
            fh.write(frame_to_bytes(f))


def load_frames(path):
    buf = Path(path).read_bytes()
    frames, off = [], 0
    while off < len(buf):
        f, off = frame_from_bytes(buf, off)
        frames.append(f)
    return frames
