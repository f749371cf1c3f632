"""Trajectory generation, frame caching and trajectory-level splits."""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import events, representations, scene
from ..errors import ConfigError, EvposeError

MANIFEST = "manifest.json"


def data_dir(out):
    return Path(out) / "data"


def frames_dir(out, representation):
    return Path(out) / "frames" / representations.ReprKind.parse(representation).label


def _model(name):
    if name == "spacecraft":
        return scene.TargetModel.spacecraft()
    if name == "cuboid":
        return scene.TargetModel.cuboid()
    raise ConfigError(f"unknown target model {name!r}")


def scene_specs(config):
    """Scene descriptions for every trajectory of the configured dataset."""
    ds = config.dataset
    if config.scene is not None:
        try:
            return [scene.SceneSpec.load(config.scene)]
        except (OSError, KeyError, ValueError) as e:
            raise ConfigError(f"cannot load scene file {config.scene}: {e}") from None
    sampler = scene.TrajectorySampler(
        range_m=ds.range_m, omega_deg=ds.omega_deg, drift=ds.drift, duration=ds.duration_s,
        attitude_spread_deg=ds.attitude_spread_deg, nominal_q=ds.nominal_q,
    )
    rng = np.random.default_rng(config.seed)
    model, cam = _model(ds.model), scene.CameraIntrinsics.default()
    specs = []
    for _ in range(ds.trajectories):
        traj = sampler.sample(rng)
        specs.append(scene.SceneSpec(model, cam, traj, traj.seed, ds.substep_s, ds.contrast_rate))
    return specs


def _manifest_ok(path, key):
    try:
        return json.loads(path.read_text()).get("data_key") == key
    except (OSError, ValueError):
        return False


def generate(config, out, log=print):
    """Write ``traj_NNNN.scene.json``, ``.evs`` and ``.gt.jsonl`` per trajectory.

    Skips the work if a manifest for the same data key is already present.
    """
    d = data_dir(out)
    key = config.data_key()
    if _manifest_ok(d / MANIFEST, key):
        return json.loads((d / MANIFEST).read_text())
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    total_events = total_windows = 0
    for i, spec in enumerate(scene_specs(config)):
        stem = d / f"traj_{i:04d}"
        spec.save(f"{stem}.scene.json")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scene.TargetOutOfFrameWarning)
            stream = spec.generate()
        wins = events.windows(stream, config.dataset.delta_t_us, t0=0)
        truths = scene.ground_truth(spec.trajectory, wins, spec.model, spec.camera, config.dataset.roi_margin)
        events.save_stream(stream, f"{stem}.evs")
        scene.save_ground_truth(truths, f"{stem}.gt.jsonl")
        entries.append({"trajectory": i, "events": len(stream), "windows": len(wins)})
        total_events += len(stream)
        total_windows += len(wins)
    manifest = {
        "data_key": key,
        **config.provenance(),
        "trajectories": entries,
        "events": total_events,
        "windows": total_windows,
    }
    (d / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    log(f"generated {len(entries)} trajectories: {total_events} events, {total_windows} windows")
    return manifest


@dataclass
class FrameRecord:
    """One cached ROI frame and the truth needed to train and evaluate on it."""

    trajectory: int
    window: int
    n_events: int
    roi: list
    affine: tuple
    keypoints_roi: np.ndarray
    truth: scene.WindowTruth


def build_frames(config, out, representation=None, log=print):
    """Frames for every window with a target: representation, ROI crop, EFR1 cache.

    Returns ``{"events": n, "seconds": s, "events_per_s": r, "per_window": [...]}``.
    """
    rep = representations.ReprKind.parse(representation or config.representation)
    manifest = generate(config, out, log)
    d, fd = data_dir(out), frames_dir(out, rep)
    key = f"{manifest['data_key']}-{config.roi_size}"
    if _manifest_ok(fd / MANIFEST, key):
        return json.loads((fd / MANIFEST).read_text())
    fd.mkdir(parents=True, exist_ok=True)
    per_window, n_events, build_s = [], 0, 0.0
    for entry in manifest["trajectories"]:
        i = entry["trajectory"]
        stream = events.load_stream(d / f"traj_{i:04d}.evs")
        truths = scene.load_ground_truth(d / f"traj_{i:04d}.gt.jsonl")
        wins = events.windows(stream, config.dataset.delta_t_us, t0=0)
        frames, meta = [], []
        for w, g in zip(wins, truths):
            if g.roi is None:
                continue
            t0 = time.perf_counter()
            frame = representations.build_frame(rep, w)
            build_s += time.perf_counter() - t0
            crop, aff = representations.crop_resize(frame, g.roi, config.roi_size)
            frames.append(crop)
            meta.append({
                "window": g.index, "events": len(w), "roi": g.roi.to_list(),
                "affine": [aff.scale_x, aff.scale_y, aff.offset_x, aff.offset_y],
                "keypoints_roi": aff.to_roi(g.keypoints).tolist(),
            })
            per_window.append(len(w))
            n_events += len(w)
        representations.save_frames(frames, fd / f"traj_{i:04d}.efr")
        (fd / f"traj_{i:04d}.json").write_text(json.dumps(meta) + "\n")
    rate = n_events / build_s if build_s > 0 else float("inf")
    info = {
        "data_key": key, "representation": rep.label, "frames": len(per_window),
        "events": n_events, "build_seconds": build_s, "events_per_s": rate, "per_window_events": per_window,
    }
    (fd / MANIFEST).write_text(json.dumps(info) + "\n")
    log(f"{rep.label}: {len(per_window)} frames, {n_events} events, {rate:,.0f} events/s")
    return info


def split_trajectories(n, fractions):
    """Contiguous trajectory-id ranges for train/val/test (trajectories are i.i.d. draws)."""
    a = int(round(fractions[0] * n))
    b = int(round((fractions[0] + fractions[1]) * n))
    ids = np.arange(n)
    return {"train": ids[:a], "val": ids[a:b], "test": ids[b:]}


@dataclass
class Split:
    x: np.ndarray
    keypoints_roi: np.ndarray
    records: list

    def __len__(self):
        return len(self.x)


def load_split(config, out, name, representation=None):
    """Cached frames of one split as an ``[N, C, S, S]`` array plus records."""
    rep = representations.ReprKind.parse(representation or config.representation)
    manifest = generate(config, out, log=lambda *_: None)
    build_frames(config, out, rep, log=lambda *_: None)
    d, fd = data_dir(out), frames_dir(out, rep)
    ids = split_trajectories(len(manifest["trajectories"]), config.split)[name]
    xs, kps, recs = [], [], []
    for i in ids:
        frames = representations.load_frames(fd / f"traj_{i:04d}.efr")
        meta = json.loads((fd / f"traj_{i:04d}.json").read_text())
        truths = {g.index: g for g in scene.load_ground_truth(d / f"traj_{i:04d}.gt.jsonl")}
        if len(frames) != len(meta):
            raise EvposeError(f"frame cache for trajectory {i} is inconsistent")
        for f, m in zip(frames, meta):
            xs.append(f.data)
            kps.append(m["keypoints_roi"])
            recs.append(FrameRecord(int(i), m["window"], m["events"], m["roi"], tuple(m["affine"]),
                                    np.array(m["keypoints_roi"]), truths[m["window"]]))
    c = rep.channels
    s = config.roi_size
    x = np.array(xs, dtype=np.float32).reshape(-1, c, s, s)
    return Split(x, np.array(kps, dtype=np.float64).reshape(-1, 8, 2), recs)
