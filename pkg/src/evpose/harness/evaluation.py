"""Test-split evaluation: keypoints, top-k selection, PnP, metrics and reports."""

from __future__ import annotations

import json
from pathlib import Path

from .. import keypoints as kp
from .. import metrics, nn, pnp, scene
from ..errors import InsufficientPointsError
from ..representations import RoiAffine
from . import dataset, training

QUANT_LABEL = "fake-quant emulation (corresponds to Quantized rows, not Deployed hardware)"


def _scene_cache(out):
    cache = {}

    def get(traj):
        if traj not in cache:
            cache[traj] = scene.SceneSpec.load(dataset.data_dir(out) / f"traj_{traj:04d}.scene.json")
        return cache[traj]
    return get


def predict_keypoints(config, net, split):
    """Per-sample KeypointSets in ROI pixels (network or oracle mode)."""
    if config.eval_mode == "oracle":
        # noise is drawn in sensor pixels, then mapped into the ROI
        out = []
        for i, rec in enumerate(split.records):
            noisy = kp.oracle_predict(rec.truth.keypoints, config.oracle_noise_px, seed=config.seed * 1_000_003 + i)
            out.append(noisy.mapped(RoiAffine(*rec.affine).to_roi))
        return out
    mode = "float" if config.regime == "float" else "fake_quant"
    return training.decode(config, nn.predict(net, split.x, mode))


def solve_sample(kps_sensor, top_k, spec, max_range):
    try:
        chosen = kp.select_top_k(kps_sensor, top_k)
    except InsufficientPointsError:
        return pnp.PoseEstimate(None, float("nan"), pnp.STATUS_NO_SOLUTION)
    corr = pnp.Correspondences.from_keypoints(spec.model, chosen, spec.camera)
    return pnp.solve(corr, max_range)


def evaluate(config, out, net=None, split=None, predictions=None, top_ks=None):
    """PoseRecords and keypoint dumps for the test split, one set per top-k.

    Returns ``{top_k: (records, keypoint_rows)}``.
    """
    if split is None:
        split = dataset.load_split(config, out, "test")
    if predictions is None:
        if config.eval_mode == "network" and net is None:
            net = training.train_or_load(config, out)
        predictions = predict_keypoints(config, net, split)
    spec_of = _scene_cache(out)
    d = config.pck_fraction * config.roi_size
    results = {}
    for k in top_ks or (config.top_k,):
        records, dumps = [], []
        for rec, pred_roi in zip(split.records, predictions):
            gt_roi = kp.KeypointSet.from_points(rec.keypoints_roi)
            hits = metrics.pck_hits(pred_roi, gt_roi, d)
            aff = RoiAffine(*rec.affine)
            pred = pred_roi.mapped(aff.to_sensor)
            est = solve_sample(pred, k, spec_of(rec.trajectory), config.max_range_m)
            sid = f"{rec.trajectory}:{rec.window}"
            records.append(metrics.PoseRecord.from_estimate(sid, rec.truth.pose, est, hits))
            dumps.append({"sample_id": sid, "top_k": k, "keypoints": pred.to_records(), "estimate": est.to_dict()})
        results[k] = (records, dumps)
    return results


def report_row(config, records, top_k):
    return metrics.ReportRow(config.repr_kind.label, config.regime, top_k, config.head, metrics.aggregate(records))


def report_meta(config, extra=None):
    meta = {
        **config.provenance(),
        "eval_mode": config.eval_mode,
        "pck_threshold_px": config.pck_fraction * config.roi_size,
        "pck_space": f"ROI pixels ({config.roi_size}x{config.roi_size})",
        "quantized_rows": QUANT_LABEL,
        "max_range_m": config.max_range_m,
    }
    if config.eval_mode == "oracle":
        meta["oracle_noise_px"] = config.oracle_noise_px
    meta.update(extra or {})
    return meta


def write_keypoints(path, dumps):
    with open(path, "w") as fh:
        for d in dumps:
            fh.write(json.dumps(d, sort_keys=True) + "\n")


def run_eval(config, out, net=None, log=print):
    """Evaluate one configuration and write JSON, CSV, SVG and keypoint dumps."""
    results = evaluate(config, out, net)
    records, dumps = results[config.top_k]
    report = metrics.RunReport([report_row(config, records, config.top_k)], report_meta(config))
    rdir = Path(out) / "reports"
    rdir.mkdir(parents=True, exist_ok=True)
    stem = rdir / f"eval_{config.repr_kind.label}_{config.head}_{config.regime}_top{config.top_k}_s{config.seed}"
    report.save(stem)
    write_keypoints(f"{stem}.keypoints.jsonl", dumps)
    for row in report.table():
        log("  ".join(row))
    return report


def resolve_from_dump(dump, spec, max_range=pnp.MAX_RANGE_M):
    """Re-run PnP from a keypoint dump line (used to check there is no hidden state)."""
    kps = kp.KeypointSet.from_records(dump["keypoints"])
    return solve_sample(kps, dump["top_k"], spec, max_range)

