import json
import math
import random

import numpy as np
import pytest
from conftest import random_pose

from evpose import keypoints as kp
from evpose import metrics, pnp, rotation, scene


def _est(pose, status=pnp.STATUS_OK):
    return pnp.PoseEstimate(pose, 0.0 if pose is not None else float("nan"), status)


def _records(rng, n=50, reject_every=0):
    out = []
    for i in range(n):
        gt = random_pose(rng)
        dq = rotation.from_rotvec(rng.normal(0, 0.02, 3))
        est = scene.Pose(rotation.multiply(dq, gt.q), gt.t + rng.normal(0, 0.05, 3))
        status = pnp.STATUS_OK
        if reject_every and i % reject_every == 0:
            status = pnp.STATUS_RANGE if i % 2 else pnp.STATUS_NO_SOLUTION
            est = est if status == pnp.STATUS_RANGE else None
        out.append(metrics.PoseRecord.from_estimate(i, gt, _est(est, status), rng.random(8) < 0.8))
    return out


def test_translation_error():
    assert metrics.translation_error([1, 0, 10], [0, 0, 10]) == (1.0, 0.1)
    with pytest.raises(ValueError):
        metrics.translation_error([1, 0, 0], [0, 0, 0])


def test_rotation_error_double_cover(rng):
    for _ in range(20):
        q = rotation.random_quaternion(rng)
        assert metrics.rotation_error(q, -q) == (0.0, 0.0)


def test_rotation_error_analytic_45_degrees():
    q = rotation.from_axis_angle([0, 0, 1], math.pi / 4)
    deg, rad = metrics.rotation_error(q, [1, 0, 0, 0])
    assert abs(deg - 45.0) < 1e-9 and abs(rad - math.pi / 4) < 1e-9


def test_rotation_error_clamps_rounding():
    q = np.array([1.0, 1e-17, 0, 0])
    assert metrics.rotation_error(q, q * (1 + 1e-16)) == (0.0, 0.0)


def test_pose_error_cross_check():
    # mean E_R 0.7941 deg and mean E_T_norm 0.0072 against a reported E_P of 0.0208
    rad = math.radians(0.7941)
    assert rad == pytest.approx(0.013860, abs=5e-7)
    e_p = metrics.pose_error(rad, 0.0072)
    assert e_p == pytest.approx(0.02106, abs=5e-6)
    assert abs(e_p - 0.0208) / 0.0208 < 0.02
    with pytest.raises(ValueError):
        metrics.pose_error(-1e-3, 0.0)


def test_mean_linearity_exact(rng):
    for reject in (0, 3):
        agg = metrics.aggregate(_records(rng, 97, reject))
        assert agg.mean_e_p == agg.mean_e_r_rad + agg.mean_e_t_norm
        acc = [r for r in _records(np.random.default_rng(1), 97, reject) if not r.rejected]
        agg2 = metrics.aggregate(acc)
        assert agg2.mean_e_p == pytest.approx(math.fsum(r.e_p for r in acc) / len(acc), rel=1e-14)


def test_aggregation_is_order_independent(rng):
    recs = _records(rng, 60, 4)
    ref = metrics.aggregate(recs).to_dict()
    shuffled = list(recs)
    for seed in range(5):
        random.Random(seed).shuffle(shuffled)
        assert metrics.aggregate(shuffled).to_dict() == ref


def test_rejections_excluded_and_counted(rng):
    gt = scene.Pose.identity((0, 0, 10))
    good = metrics.PoseRecord.from_estimate("a", gt, _est(scene.Pose.identity((0, 0, 11))), [True] * 8)
    far = metrics.PoseRecord.from_estimate("b", gt, _est(scene.Pose.identity((0, 0, 35)), pnp.STATUS_RANGE),
                                           [False] * 8)
    none = metrics.PoseRecord.from_estimate("c", gt, _est(None, pnp.STATUS_NO_SOLUTION), [True] * 4 + [False] * 4)
    agg = metrics.aggregate([good, far, none])
    assert (agg.total, agg.accepted, agg.rejected) == (3, 1, 2)
    assert agg.rejected_by_status == {pnp.STATUS_RANGE: 1, pnp.STATUS_NO_SOLUTION: 1}
    # the 35 m estimate would have E_T 25 m; only the accepted 1 m error counts
    assert agg.mean_e_t == pytest.approx(1.0)
    assert agg.mean_e_t_norm == pytest.approx(0.1)
    assert far.e_t is None and far.rejected
    assert agg.pck == pytest.approx(12 / 24)


def test_solver_range_rejection_flows_into_aggregate(cam):
    gt = scene.Pose.identity((0.0, 0.0, 35.0))
    uv, _ = scene.project(scene.TargetModel.cuboid().keypoints_3d, gt, cam)
    est = pnp.solve(pnp.Correspondences(scene.TargetModel.cuboid().keypoints_3d, uv, cam))
    rec = metrics.PoseRecord.from_estimate("far", gt, est)
    agg = metrics.aggregate([rec])
    assert rec.rejected and agg.accepted == 0 and agg.rejected_by_status == {pnp.STATUS_RANGE: 1}


def test_empty_accepted_set():
    gt = scene.Pose.identity()
    agg = metrics.aggregate([metrics.PoseRecord.from_estimate(0, gt, _est(None, pnp.STATUS_NO_SOLUTION))])
    assert agg.empty and agg.note == metrics.NO_ACCEPTED and agg.mean_e_p is None
    assert metrics.aggregate([]).total == 0


def test_pck():
    gt = kp.KeypointSet.from_points(np.zeros((8, 2)))
    pts = np.zeros((8, 2))
    pts[:, 0] = np.arange(8)
    pred = kp.KeypointSet.from_points(pts)
    assert metrics.pck(pred, gt, 3.2) == 4 / 8
    assert metrics.pck_threshold(64) == pytest.approx(3.2)
    invalid = kp.KeypointSet(pts, np.zeros(8), np.zeros(8, bool), np.arange(8))
    assert metrics.pck(invalid, gt, 100) == 0.0
    with pytest.raises(ValueError):
        metrics.pck(pred.subset([1, 0, 2, 3, 4, 5, 6, 7]), gt, 3.2)
    with pytest.raises(ValueError):
        metrics.pck(pred, gt, 0)


def test_cdf_is_sorted_and_complete(rng):
    agg = metrics.aggregate(_records(rng, 20))
    vals = [v for v, _ in agg.cdf]
    assert vals == sorted(vals) and agg.cdf[-1][1] == 1.0 and len(vals) == 20


def test_report_outputs(tmp_path, rng):
    rows = [metrics.ReportRow("LNES", "float", 8, "heatmap", metrics.aggregate(_records(rng, 10, 3))),
            metrics.ReportRow("E2F", "w4a4", 5, "coordinate", metrics.aggregate([]))]
    report = metrics.RunReport(rows, {"seed": 0, "config_hash": "abc"})
    report.save(tmp_path / "r")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["meta"]["config_hash"] == "abc" and len(data["rows"]) == 2
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("config") and len({len(line) for line in lines}) == 1
    svg = (tmp_path / "r.svg").read_text()
    assert svg.startswith("<svg") and svg.count("<polyline") == 1
    assert report.table()[1][1:6] == ["-"] * 5
