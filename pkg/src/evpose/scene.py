"""Synthetic event scenes: a tumbling cuboid bus seen by a pinhole event camera.

Events follow an idealised edge-occupancy model. At each substep the target's
edges are rasterised; pixels that become covered emit +1 events and pixels that
become uncovered emit -1 events.
"""

from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels, rotation
from .errors import NoTargetError
from .events import EventStream
from .representations import Roi, ground_truth_roi

DEFAULT_ROI_MARGIN = 0.1
_Z_NEAR = 0.05


class TargetOutOfFrameWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the sensor")

    @classmethod
    def default(cls):
        # EVK4-HD resolution; focal length chosen for a ~62 degree horizontal FOV
        return cls(1066.0, 1066.0, 639.5, 359.5, 1280, 720)

    @property
    def dims(self):
        return (self.width, self.height)

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self):
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


def _cuboid_corners(size):
    sx, sy, sz = (0.5 * float(s) for s in size)
    # corner i has sign bits (x: bit 0, y: bit 1, z: bit 2)
    return np.array(
        [[sx if i & 1 else -sx, sy if i & 2 else -sy, sz if i & 4 else -sz] for i in range(8)]
    )


CUBOID_EDGES = tuple((i, i | b) for i in range(8) for b in (1, 2, 4) if not i & b)


@dataclass(frozen=True)
class TargetModel:
    """Eight labelled cuboid corners plus the 12 edges joining them.

    ``appendages`` are extra body-frame line segments ``(2, 3)`` that emit events
    but are not keypoints (an antenna boom, say). They break the cuboid's
    rotational symmetry in the image so that corner identities are learnable.
    """

    keypoints_3d: np.ndarray
    edges: tuple = CUBOID_EDGES
    appendages: np.ndarray = field(default_factory=lambda: np.zeros((0, 2, 3)))
    size: tuple = (1.0, 1.0, 0.5)

    def __post_init__(self):
        kp = np.asarray(self.keypoints_3d, dtype=np.float64)
        if kp.shape != (8, 3):
            raise ValueError("a target has exactly 8 corner keypoints")
        if len(self.edges) != 12 or any(not (0 <= a < 8 and 0 <= b < 8) for a, b in self.edges):
            raise ValueError("a cuboid has 12 edges between valid corners")
        axes = kp[[1, 2, 4]] - kp[0]
        gram = axes @ axes.T
        if np.abs(gram - np.diag(np.diag(gram))).max() > 1e-9 * max(1.0, gram.max()):
            raise ValueError("cuboid axes are not pairwise orthogonal")
        object.__setattr__(self, "keypoints_3d", kp)
        object.__setattr__(self, "appendages", np.asarray(self.appendages, dtype=np.float64).reshape(-1, 2, 3))

    @classmethod
    def cuboid(cls, size=(1.0, 1.0, 0.5), appendages=None):
        size = tuple(float(s) for s in size)
        app = np.zeros((0, 2, 3)) if appendages is None else appendages
        return cls(_cuboid_corners(size), CUBOID_EDGES, app, size)

    @classmethod
    def spacecraft(cls, size=(1.0, 1.0, 0.5)):
        """Cuboid bus with an off-centre antenna boom on the +z face and a short stub on +x."""
        sx, sy, sz = (0.5 * s for s in size)
        boom = [[0.25 * sx, 0.4 * sy, sz], [0.25 * sx, 0.4 * sy, sz + 0.6 * size[2] + 0.2]]
        stub = [[sx, -0.5 * sy, -0.3 * sz], [sx + 0.25, -0.5 * sy, -0.3 * sz]]
        return cls.cuboid(size, np.array([boom, stub]))

    def segments(self):
        """All body-frame line segments ``(m, 2, 3)``: edges then appendages."""
        kp = self.keypoints_3d
        edges = np.stack([kp[[a for a, _ in self.edges]], kp[[b for _, b in self.edges]]], axis=1)
        return np.concatenate([edges, self.appendages], axis=0)

    def to_dict(self):
        return {
            "size": list(self.size),
            "appendages": self.appendages.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("kind") == "spacecraft":
            return cls.spacecraft(tuple(d.get("size", (1.0, 1.0, 0.5))))
        return cls.cuboid(tuple(d.get("size", (1.0, 1.0, 0.5))), np.array(d.get("appendages", [])))


@dataclass(frozen=True)
class Pose:
    """Body-to-camera rigid transform: ``X_cam = R(q) @ X_body + t``."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", rotation.normalize(self.q))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))

    @classmethod
    def from_matrix(cls, R, t):
        return cls(rotation.from_matrix(R), t)

    @classmethod
    def identity(cls, t=(0.0, 0.0, 1.0)):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), t)

    @property
    def R(self):
        return rotation.to_matrix(self.q)

    def transform(self, pts):
        return np.asarray(pts, dtype=np.float64) @ self.R.T + self.t

    def to_dict(self):
        return {"q": self.q.tolist(), "t": self.t.tolist()}


@dataclass(frozen=True)
class Trajectory:
    """Constant body-rate tumble and constant linear drift from an initial pose.

    ``omega`` is the body-frame angular velocity (rad/s), ``v`` the camera-frame
    velocity (m/s), ``duration`` seconds. ``seed`` drives the event generator.
    """

    q0: np.ndarray
    t0: np.ndarray
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    duration: float = 10.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "q0", rotation.normalize(self.q0))
        for name in ("t0", "omega", "v"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(3))

    def pose(self, time_s):
        dq = rotation.from_rotvec(self.omega * time_s)
        q = rotation.normalize(rotation.multiply(self.q0, dq))
        return Pose(q, self.t0 + self.v * time_s)

    def rotation_matrix(self, time_s):
        return rotation.to_matrix(self.q0) @ rotation.exp_so3(self.omega * time_s)

    def to_dict(self):
        return {
            "q0": self.q0.tolist(),
            "t0": self.t0.tolist(),
            "omega": self.omega.tolist(),
            "v": self.v.tolist(),
            "duration": self.duration,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["q0"]), np.array(d["t0"]), np.array(d.get("omega", [0, 0, 0])),
                   np.array(d.get("v", [0, 0, 0])), float(d.get("duration", 10.0)), int(d.get("seed", 0)))


def project(points_3d, pose, cam):
    """Pinhole projection. Returns ``(uv, visible)``; ``visible`` is False behind the
    camera or off-sensor. Self-occlusion is not modelled."""
    Xc = pose.transform(np.asarray(points_3d, dtype=np.float64).reshape(-1, 3))
    z = Xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * Xc[:, 0] / z + cam.cx
        v = cam.fy * Xc[:, 1] / z + cam.cy
    uv = np.column_stack([u, v])
    visible = (z > 0) & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    return uv, visible


# ---------------------------------------------------------------------------
# event synthesis


def occupancy(segments_body, R, t, cam):
    """Sorted linear indices of sensor pixels covered by the body segments at pose (R, t)."""
    seg_cam = segments_body @ R.T + t
    return kernels.occupancy(seg_cam, cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height, _Z_NEAR)


def events_from_occupancy(occupancies, times_us, width, height, contrast_rate, rng):
    """Turn a sequence of occupancy sets into events.

    ``occupancies[k]`` is sampled at ``times_us[k]``; changes between samples k-1
    and k are stamped at their midpoint plus sub-microsecond jitter.
    """
    xs, ys, ps, ts = [], [], [], []
    prev = None
    for k, occ in enumerate(occupancies):
        if prev is not None:
            mid = 0.5 * (times_us[k - 1] + times_us[k])
            on = kernels.sorted_difference(occ, prev)
            off = kernels.sorted_difference(prev, occ)
            idx = np.concatenate([on, off])
            if idx.size:
                pol = np.concatenate([np.ones(on.size, np.int64), -np.ones(off.size, np.int64)])
                reps = _repeat_counts(idx.size, contrast_rate, rng)
                idx = np.repeat(idx, reps)
                pol = np.repeat(pol, reps)
                stamps = np.floor(mid + rng.random(idx.size)).astype(np.int64)
                xs.append(idx % width)
                ys.append(idx // width)
                ps.append(pol)
                ts.append(stamps)
        prev = occ
    if not ts:
        return EventStream.empty(width, height)
    x, y, p, t = (np.concatenate(c) for c in (xs, ys, ps, ts))
    order = np.argsort(t, kind="stable")
    return EventStream(width, height, x[order], y[order], p[order], t[order])


def _repeat_counts(n, rate, rng):
    base = math.floor(rate)
    frac = rate - base
    reps = np.full(n, base, dtype=np.int64)
    if frac > 0:
        reps += rng.random(n) < frac
    return reps


def generate_events(model, traj, cam, substep=1e-3, contrast_rate=1.0):
    """Synthesise the event stream of ``model`` following ``traj``.

    Deterministic given ``traj.seed``. Warns and returns an empty stream if the
    target never covers a sensor pixel.
    """
    if substep <= 0:
        raise ValueError("substep must be positive")
    if contrast_rate < 1:
        raise ValueError("contrast_rate must be >= 1")
    rng = np.random.default_rng(traj.seed)
    n_steps = int(math.floor(traj.duration / substep + 1e-9))
    segments = model.segments()
    times_us = [k * substep * 1e6 for k in range(n_steps + 1)]
    occs = []
    seen = False
    for k in range(n_steps + 1):
        tau = k * substep
        occ = occupancy(segments, traj.rotation_matrix(tau), traj.t0 + traj.v * tau, cam)
        seen |= occ.size > 0
        occs.append(occ)
    if not seen:
        warnings.warn("target never enters the frame; empty stream", TargetOutOfFrameWarning)
        return EventStream.empty(cam.width, cam.height)
    return events_from_occupancy(occs, times_us, cam.width, cam.height, contrast_rate, rng)


# ---------------------------------------------------------------------------
# ground truth


@dataclass(frozen=True)
class WindowTruth:
    index: int
    t_mid: float  # microseconds
    pose: Pose
    keypoints: np.ndarray  # (8, 2) sensor pixels
    visible: np.ndarray
    roi: Roi | None

    def to_dict(self):
        return {
            "window": self.index,
            "t_mid": self.t_mid,
            "q": self.pose.q.tolist(),
            "t": self.pose.t.tolist(),
            "keypoints": self.keypoints.tolist(),
            "visible": self.visible.astype(bool).tolist(),
            "roi": None if self.roi is None else self.roi.to_list(),
        }

    @classmethod
    def from_dict(cls, d):
        roi = None if d.get("roi") is None else Roi(*d["roi"])
        return cls(int(d["window"]), float(d["t_mid"]), Pose(np.array(d["q"]), np.array(d["t"])),
                   np.array(d["keypoints"], dtype=np.float64), np.array(d["visible"], dtype=bool), roi)


def ground_truth(traj, windows, model, cam, margin=DEFAULT_ROI_MARGIN):
    out = []
    for i, w in enumerate(windows):
        t_mid = 0.5 * (w.t_start + w.t_end)
        pose = traj.pose(t_mid * 1e-6)
        kps, vis = project(model.keypoints_3d, pose, cam)
        try:
            roi = ground_truth_roi(kps, margin, cam.dims)
        except NoTargetError:
            roi = None
        out.append(WindowTruth(i, t_mid, pose, kps, vis, roi))
    return out


def save_ground_truth(truths, path):
    with open(path, "w") as fh:
        for r in truths:
            fh.write(json.dumps(r.to_dict()) + "\n")


def load_ground_truth(path):
    with open(path) as fh:
        return [WindowTruth.from_dict(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# trajectory sampling and scene files


@dataclass(frozen=True)
class TrajectorySampler:
    """Random trajectory distribution. Ranges are ``(low, high)`` pairs.

    ``attitude_spread_deg=None`` draws the initial attitude uniformly over SO(3);
    otherwise it is ``nominal_q`` perturbed by a rotation of at most that angle.
    ``drift`` is the linear speed as a fraction of range per second.
    """

    range_m: tuple = (3.0, 15.0)
    omega_deg: tuple = (2.0, 20.0)
    drift: tuple = (0.02, 0.1)
    duration: float = 10.0
    off_axis_deg: float = 5.0
    attitude_spread_deg: float | None = None
    nominal_q: tuple = (1.0, 0.0, 0.0, 0.0)

    def sample(self, rng):
        for _ in range(100):
            traj = self._draw(rng)
            zs = [traj.pose(s).t[2] for s in np.linspace(0.0, traj.duration, 11)]
            if min(zs) > 1.0:
                return traj
        raise RuntimeError("could not sample a trajectory that stays in front of the camera")

    def _draw(self, rng):
        rng_m = rng.uniform(*self.range_m)
        off = math.radians(self.off_axis_deg) * math.sqrt(rng.random())
        az = rng.uniform(0, 2 * math.pi)
        t0 = rng_m * np.array([math.sin(off) * math.cos(az), math.sin(off) * math.sin(az), math.cos(off)])
        if self.attitude_spread_deg is None:
            q0 = rotation.random_quaternion(rng)
        else:
            axis = _unit(rng.normal(size=3))
            ang = math.radians(self.attitude_spread_deg) * rng.random() ** (1 / 3)
            q0 = rotation.multiply(rotation.from_axis_angle(axis, ang), np.asarray(self.nominal_q, float))
        omega = _unit(rng.normal(size=3)) * math.radians(rng.uniform(*self.omega_deg))
        v = _unit(rng.normal(size=3)) * rng_m * rng.uniform(*self.drift)
        seed = int(rng.integers(0, 2**31 - 1))
        return Trajectory(q0, t0, omega, v, self.duration, seed)


def _unit(v):
    return v / np.linalg.norm(v)


@dataclass
class SceneSpec:
    model: TargetModel
    camera: CameraIntrinsics
    trajectory: Trajectory
    seed: int = 0
    substep: float = 1e-3
    contrast_rate: float = 1.0

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "camera": self.camera.to_dict(),
            "trajectory": self.trajectory.to_dict(),
            "seed": self.seed,
            "substep": self.substep,
            "contrast_rate": self.contrast_rate,
        }

    @classmethod
    def from_dict(cls, d):
        traj = Trajectory.from_dict(d["trajectory"])
        return cls(
            TargetModel.from_dict(d.get("model", {})),
            CameraIntrinsics.from_dict(d["camera"]) if "camera" in d else CameraIntrinsics.default(),
            traj,
            int(d.get("seed", traj.seed)),
            float(d.get("substep", 1e-3)),
            float(d.get("contrast_rate", 1.0)),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def generate(self):
        traj = dataclasses.replace(self.trajectory, seed=self.seed)
        return generate_events(self.model, traj, self.camera, self.substep, self.contrast_rate)
