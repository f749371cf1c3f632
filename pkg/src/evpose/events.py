"""Event data model, EVS1/CSV stream files and fixed-window partitioning."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import EventBoundsError, EventFormatError, EventOrderError

EVS_MAGIC = b"EVS1"
EVS_VERSION = 1
# magic, version u8, width u16, height u16, count u64
_HEADER = struct.Struct("<4sBHHQ")
RECORD_DTYPE = np.dtype([("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("t", "<u8")])
assert RECORD_DTYPE.itemsize == 13

_T_MAX = np.iinfo(np.int64).max


class Event(NamedTuple):
    x: int
    y: int
    p: int
    t: int


def _readonly(a):
    a.flags.writeable = False
    return a


class EventStream:
    """Time-ordered events of one sensor.

    Events are held column-wise (``x``, ``y``: uint16, ``p``: int8, ``t``: int64 µs)
    and are read-only once the stream is built.
    """

    __slots__ = ("width", "height", "x", "y", "p", "t")

    def __init__(self, width, height, x=(), y=(), p=(), t=(), *, validate=True):
        self.width = int(width)
        self.height = int(height)
        if not (0 < self.width <= 0xFFFF and 0 < self.height <= 0xFFFF):
            raise EventBoundsError(f"invalid sensor size {width}x{height}")
        x = np.ascontiguousarray(x, dtype=np.int64)
        y = np.ascontiguousarray(y, dtype=np.int64)
        p = np.ascontiguousarray(p, dtype=np.int64)
        t = np.ascontiguousarray(t, dtype=np.int64)
        if not (len(x) == len(y) == len(p) == len(t)):
            raise ValueError("event columns differ in length")
        if validate:
            _check_events(x, y, p, t, self.width, self.height)
        self.x = _readonly(x.astype(np.uint16))
        self.y = _readonly(y.astype(np.uint16))
        self.p = _readonly(p.astype(np.int8))
        self.t = _readonly(t)

    @classmethod
    def from_events(cls, width, height, events):
        cols = np.array([tuple(e) for e in events], dtype=np.int64).reshape(-1, 4)
        return cls(width, height, cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3])

    @classmethod
    def empty(cls, width, height):
        return cls(width, height)

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i):
        return Event(int(self.x[i]), int(self.y[i]), int(self.p[i]), int(self.t[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
            and np.array_equal(self.t, other.t)
        )

    def __repr__(self):
        return f"EventStream({self.width}x{self.height}, {len(self)} events)"

    @property
    def dims(self):
        return (self.width, self.height)

    def records(self):
        rec = np.empty(len(self), dtype=RECORD_DTYPE)
        rec["x"], rec["y"], rec["p"], rec["t"] = self.x, self.y, self.p, self.t
        return rec


def _check_events(x, y, p, t, width, height):
    if len(t) == 0:
        return
    bad = np.flatnonzero((p != 1) & (p != -1))
    if bad.size:
        raise EventBoundsError(f"polarity must be -1 or +1 (record {bad[0]})", int(bad[0]))
    bad = np.flatnonzero((x < 0) | (x >= width) | (y < 0) | (y >= height))
    if bad.size:
        i = int(bad[0])
        raise EventBoundsError(
            f"event {i} at ({x[i]}, {y[i]}) outside {width}x{height} sensor", i
        )
    bad = np.flatnonzero(t < 0)
    if bad.size:
        raise EventBoundsError(f"negative timestamp at record {bad[0]}", int(bad[0]))
    bad = np.flatnonzero(np.diff(t) < 0)
    if bad.size:
        i = int(bad[0]) + 1
        raise EventOrderError(i, int(t[i - 1]), int(t[i]))


@dataclass(frozen=True)
class Window:
    """Half-open time slice ``[t_start, t_end)`` of a parent stream."""

    stream: EventStream
    t_start: int
    t_end: int
    start: int
    stop: int

    @property
    def x(self):
        return self.stream.x[self.start:self.stop]

    @property
    def y(self):
        return self.stream.y[self.start:self.stop]

    @property
    def p(self):
        return self.stream.p[self.start:self.stop]

    @property
    def t(self):
        return self.stream.t[self.start:self.stop]

    @property
    def dims(self):
        return self.stream.dims

    @property
    def t_mid(self):
        return 0.5 * (self.t_start + self.t_end)

    def __len__(self):
        return self.stop - self.start

    def __repr__(self):
        return f"Window([{self.t_start}, {self.t_end}), {len(self)} events)"


def window_from_events(width, height, events, t_start, t_end):
    """Wrap an explicit event list as a single window (handy for tests and tools)."""
    stream = EventStream.from_events(width, height, events)
    if len(stream) and (stream.t[0] < t_start or stream.t[-1] >= t_end):
        raise ValueError("events fall outside the window interval")
    return Window(stream, int(t_start), int(t_end), 0, len(stream))


def default_t0(stream, delta_t):
    if len(stream) == 0:
        return 0
    return int(stream.t[0]) // delta_t * delta_t


def windows(stream, delta_t, t0=None):
    """Tile the stream into complete windows of length ``delta_t`` starting at ``t0``.

    The incomplete tail after the last full window is dropped.
    """
    delta_t = int(delta_t)
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    if len(stream) == 0:
        return []
    if t0 is None:
        t0 = default_t0(stream, delta_t)
    t0 = int(t0)
    if t0 > stream.t[0]:
        raise ValueError(f"t0={t0} is after the first event ({stream.t[0]})")
    k = (int(stream.t[-1]) + 1 - t0) // delta_t
    edges = t0 + delta_t * np.arange(k + 1, dtype=np.int64)
    idx = np.searchsorted(stream.t, edges, side="left")
    return [
        Window(stream, int(edges[i]), int(edges[i + 1]), int(idx[i]), int(idx[i + 1]))
        for i in range(k)
    ]


# ---------------------------------------------------------------------------
# file formats


def save_stream(stream, path, format="binary"):
    path = Path(path)
    if format == "binary":
        header = _HEADER.pack(EVS_MAGIC, EVS_VERSION, stream.width, stream.height, len(stream))
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(stream.records().tobytes())
    elif format == "csv":
        with open(path, "w", newline="\n") as fh:
            fh.write(f"# sensor {stream.width} {stream.height}\n")
            fh.write("x,y,p,t\n")
            if len(stream):
                cols = np.column_stack([stream.x, stream.y, stream.p, stream.t]).astype(np.int64)
                np.savetxt(fh, cols, fmt="%d", delimiter=",")
    else:
        raise ValueError(f"unknown stream format {format!r}")


def load_stream(path, format=None, *, width=None, height=None):
    """Load an EVS1 (``binary``) or CSV event file.

    ``format`` defaults from the suffix (``.csv`` → csv, anything else binary).
    For CSV, sensor dimensions come from the ``# sensor W H`` comment line, or from
    ``width``/``height``.
    """
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "binary"
    if format == "binary":
        return _load_binary(path.read_bytes())
    if format == "csv":
        return _load_csv(path.read_bytes(), width, height)
    raise ValueError(f"unknown stream format {format!r}")


def _load_binary(buf):
    if len(buf) < _HEADER.size:
        raise EventFormatError("truncated EVS1 header", len(buf))
    magic, version, width, height, count = _HEADER.unpack_from(buf)
    if magic != EVS_MAGIC:
        raise EventFormatError(f"bad magic {magic!r}", 0)
    if version != EVS_VERSION:
        raise EventFormatError(f"unsupported EVS version {version}", 4)
    if width == 0 or height == 0:
        raise EventFormatError("zero sensor dimension", 5)
    body = len(buf) - _HEADER.size
    need = count * RECORD_DTYPE.itemsize
    if body < need:
        whole = body // RECORD_DTYPE.itemsize
        raise EventFormatError(
            f"truncated record {whole} (header declares {count})",
            _HEADER.size + whole * RECORD_DTYPE.itemsize,
        )
    if body > need:
        raise EventFormatError("trailing bytes after last record", _HEADER.size + need)
    rec = np.frombuffer(buf, dtype=RECORD_DTYPE, count=count, offset=_HEADER.size)
    bad = np.flatnonzero((rec["p"] != 1) & (rec["p"] != -1))
    if bad.size:
        i = int(bad[0])
        raise EventFormatError(
            f"record {i} has polarity {rec['p'][i]}", _HEADER.size + i * RECORD_DTYPE.itemsize + 4
        )
    bad = np.flatnonzero(rec["t"] > _T_MAX)
    if bad.size:
        i = int(bad[0])
        raise EventFormatError(
            f"record {i} timestamp exceeds int64", _HEADER.size + i * RECORD_DTYPE.itemsize + 5
        )
    return EventStream(width, height, rec["x"], rec["y"], rec["p"], rec["t"].astype(np.int64))


def _load_csv(buf, width, height):
    offset = 0
    header_seen = False
    rows = []
    for raw in buf.splitlines(keepends=True):
        line = raw.decode("ascii", errors="replace").strip()
        if not line:
            pass
        elif line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 3 and parts[0] == "sensor" and width is None and height is None:
                try:
                    width, height = int(parts[1]), int(parts[2])
                except ValueError:
                    raise EventFormatError("bad sensor comment", offset) from None
        elif not header_seen:
            if [c.strip() for c in line.split(",")] != ["x", "y", "p", "t"]:
                raise EventFormatError("expected header 'x,y,p,t'", offset)
            header_seen = True
        else:
            fields = line.split(",")
            try:
                if len(fields) != 4:
                    raise ValueError
                row = tuple(int(f) for f in fields)
            except ValueError:
                raise EventFormatError(f"malformed record {line!r}", offset) from None
            if row[2] not in (1, -1):
                raise EventFormatError(f"polarity must be -1 or +1, got {row[2]}", offset)
            rows.append(row)
        offset += len(raw)
    if not header_seen:
        raise EventFormatError("missing header 'x,y,p,t'", 0)
    cols = np.array(rows, dtype=np.int64).reshape(-1, 4)
    if width is None or height is None:
        if not rows:
            raise EventFormatError("cannot infer sensor size from an empty CSV", 0)
        width = int(cols[:, 0].max()) + 1
        height = int(cols[:, 1].max()) + 1
    return EventStream(width, height, cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3])
