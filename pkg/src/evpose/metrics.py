"""Pose and keypoint error metrics, per-sample records and rejection-aware aggregation."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import rotation
from .pnp import STATUS_OK

NO_ACCEPTED = "no accepted samples"
PCK_FRACTION = 0.05


def translation_error(t_est, t_gt):
    """``(||t_est - t_gt||, ||t_est - t_gt|| / ||t_gt||)``."""
    t_est = np.asarray(t_est, dtype=np.float64)
    t_gt = np.asarray(t_gt, dtype=np.float64)
    norm = float(np.linalg.norm(t_gt))
    if norm == 0:
        raise ValueError("normalised translation error undefined for ||t|| = 0")
    e = float(np.linalg.norm(t_est - t_gt))
    return e, e / norm


def rotation_error(q_est, q_gt):
    """Geodesic angle ``2 arccos |<q_est, q_gt>|`` as ``(degrees, radians)``.

    Evaluated as ``4 atan2(|a - b|, |a + b|)`` after aligning the signs, which
    equals the arccos form but stays exact near zero (``q`` vs ``-q`` gives 0).
    """
    a = rotation.normalize(q_est)
    b = rotation.normalize(q_gt)
    if float(np.dot(a, b)) < 0:
        b = -b
    rad = 4.0 * math.atan2(float(np.linalg.norm(a - b)), float(np.linalg.norm(a + b)))
    return math.degrees(rad), rad


def pose_error(e_r_rad, e_t_norm):
    if e_r_rad < 0 or e_t_norm < 0:
        raise ValueError("pose error components must be non-negative")
    return e_r_rad + e_t_norm


def pck_threshold(roi_size, fraction=PCK_FRACTION):
    return fraction * roi_size


def pck_hits(pred, gt, d):
    """Per-keypoint boolean hits; invalid predictions are misses."""
    if d <= 0:
        raise ValueError("PCK threshold must be positive")
    if len(pred) != len(gt) or not np.array_equal(pred.indices, gt.indices):
        raise ValueError("prediction and ground truth must share keypoint indices and order")
    dist = np.linalg.norm(pred.points - gt.points, axis=1)
    with np.errstate(invalid="ignore"):
        return pred.valid & (dist <= d)


def pck(pred, gt, d):
    """Fraction of keypoints within ``d`` pixels of ground truth."""
    hits = pck_hits(pred, gt, d)
    return float(np.count_nonzero(hits)) / len(hits) if len(hits) else 0.0


# ---------------------------------------------------------------------------
# records and aggregation


@dataclass(frozen=True)
class PoseRecord:
    sample_id: str
    gt_pose: object
    estimate: object
    pck_hits: tuple = ()
    e_t: float | None = None
    e_t_norm: float | None = None
    e_r_deg: float | None = None
    e_r_rad: float | None = None
    e_p: float | None = None

    @property
    def rejected(self):
        return self.estimate.status != STATUS_OK

    @classmethod
    def from_estimate(cls, sample_id, gt_pose, estimate, pck_hits=()):
        hits = tuple(bool(h) for h in pck_hits)
        if estimate.status != STATUS_OK:
            return cls(str(sample_id), gt_pose, estimate, hits)
        e_t, e_tn = translation_error(estimate.pose.t, gt_pose.t)
        deg, rad = rotation_error(estimate.pose.q, gt_pose.q)
        return cls(str(sample_id), gt_pose, estimate, hits, e_t, e_tn, deg, rad, pose_error(rad, e_tn))

    def to_dict(self):
        return {
            "sample_id": self.sample_id,
            "status": self.estimate.status,
            "rejected": self.rejected,
            "E_T": self.e_t,
            "E_T_norm": self.e_t_norm,
            "E_R_deg": self.e_r_deg,
            "E_R_rad": self.e_r_rad,
            "E_P": self.e_p,
            "pck_hits": list(self.pck_hits),
            "gt_pose": self.gt_pose.to_dict(),
            "estimate": self.estimate.to_dict(),
        }


def _mean(values):
    """Order-independent mean: exact (correctly rounded) sum divided by the count."""
    return math.fsum(values) / len(values)


@dataclass(frozen=True)
class Aggregate:
    total: int
    accepted: int
    rejected: int
    rejected_by_status: dict
    pck: float | None
    mean_e_t: float | None
    mean_e_t_norm: float | None
    mean_e_r_deg: float | None
    mean_e_r_rad: float | None
    mean_e_p: float | None
    cdf: list = field(default_factory=list)
    note: str | None = None

    @property
    def empty(self):
        return self.accepted == 0

    def to_dict(self):
        return {
            "total": self.total,
            "accepted": self.accepted,
            "rejected": self.rejected,
            "rejected_by_status": dict(sorted(self.rejected_by_status.items())),
            "PCK": self.pck,
            "E_T": self.mean_e_t,
            "E_T_norm": self.mean_e_t_norm,
            "E_R_deg": self.mean_e_r_deg,
            "E_R_rad": self.mean_e_r_rad,
            "E_P": self.mean_e_p,
            "E_P_cdf": self.cdf,
            "note": self.note,
        }


def aggregate(records):
    """Means over accepted records, rejection counts, PCK over all records and the E_P CDF.

    The PCK covers every sample since keypoint prediction precedes PnP. Sums
    use ``math.fsum`` so the result does not depend on record order.
    """
    records = list(records)
    acc = [r for r in records if not r.rejected]
    by_status = {}
    for r in records:
        if r.rejected:
            by_status[r.estimate.status] = by_status.get(r.estimate.status, 0) + 1
    hits = [h for r in records for h in r.pck_hits]
    pck_val = (sum(hits) / len(hits)) if hits else None
    if not acc:
        return Aggregate(len(records), 0, len(records), by_status, pck_val,
                         None, None, None, None, None, [], NO_ACCEPTED)
    e_p = sorted(r.e_p for r in acc)
    cdf = [[v, (i + 1) / len(e_p)] for i, v in enumerate(e_p)]
    mean_r = _mean([r.e_r_rad for r in acc])
    mean_tn = _mean([r.e_t_norm for r in acc])
    return Aggregate(
        total=len(records),
        accepted=len(acc),
        rejected=len(records) - len(acc),
        rejected_by_status=by_status,
        pck=pck_val,
        mean_e_t=_mean([r.e_t for r in acc]),
        mean_e_t_norm=mean_tn,
        mean_e_r_deg=_mean([r.e_r_deg for r in acc]),
        mean_e_r_rad=mean_r,
        # by linearity; summing the rounded per-sample E_P instead drifts by a few ulps
        mean_e_p=mean_r + mean_tn,
        cdf=cdf,
    )


# ---------------------------------------------------------------------------
# run reports

TABLE_COLUMNS = ("PCK", "E_T", "E_T_norm", "E_R_deg", "E_P", "Rej")


@dataclass
class ReportRow:
    representation: str
    regime: str
    top_k: int | None
    head: str
    aggregate: Aggregate

    def label(self):
        k = "all" if self.top_k is None else str(self.top_k)
        return f"{self.representation}({k}) {self.head} {self.regime}"

    def to_dict(self):
        return {
            "representation": self.representation,
            "regime": self.regime,
            "top_k": self.top_k,
            "head": self.head,
            **self.aggregate.to_dict(),
        }


@dataclass
class RunReport:
    rows: list
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {"meta": dict(sorted(self.meta.items())), "rows": [r.to_dict() for r in self.rows]}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self):
        """Rows of ``[label, PCK, E_T, E_T_norm, E_R_deg, E_P, Rej]`` as strings."""
        out = []
        for r in self.rows:
            a = r.aggregate
            cells = [r.label()]
            for v in (a.pck, a.mean_e_t, a.mean_e_t_norm, a.mean_e_r_deg, a.mean_e_p):
                cells.append("-" if v is None else f"{v:.4f}")
            cells.append(str(a.rejected))
            out.append(cells)
        return out

    def to_csv(self):
        """Aligned-column CSV (cells padded to a common width per column)."""
        header = ["config", *TABLE_COLUMNS]
        rows = [header] + self.table()
        widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for row in rows:
            w.writerow([c.rjust(widths[i]) if i else c.ljust(widths[i]) for i, c in enumerate(row)])
        return buf.getvalue()

    def save(self, stem):
        stem = str(stem)
        with open(stem + ".json", "w") as f:
            f.write(self.to_json() + "\n")
        with open(stem + ".csv", "w") as f:
            f.write(self.to_csv())
        with open(stem + ".svg", "w") as f:
            f.write(cdf_svg(self.rows))


_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def cdf_svg(rows, width=640, height=400, x_max=None):
    """Self-contained SVG with one empirical E_P CDF polyline per report row."""
    pad = 50
    curves = [(r.label(), r.aggregate.cdf) for r in rows if r.aggregate.cdf]
    if x_max is None:
        xs = [p[0] for _, c in curves for p in c]
        x_max = max(xs) if xs and max(xs) > 0 else 1.0
    pw, ph = width - 2 * pad, height - 2 * pad

    def sx(v):
        return pad + pw * min(v, x_max) / x_max

    def sy(p):
        return height - pad - ph * p

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle">E_P</text>',
        f'<text x="14" y="{height / 2}" transform="rotate(-90 14 {height / 2})" '
        f'text-anchor="middle">fraction of samples</text>',
    ]
    for i in range(5):
        v = x_max * i / 4
        parts.append(f'<text x="{sx(v):.1f}" y="{height - pad + 15}" text-anchor="middle">{v:.3g}</text>')
        parts.append(f'<text x="{pad - 6}" y="{sy(i / 4) + 4:.1f}" text-anchor="end">{i / 4:.2f}</text>')
    for n, (label, cdf) in enumerate(curves):
        color = _COLORS[n % len(_COLORS)]
        pts = [(0.0, 0.0)]
        prev = 0.0
        for v, p in cdf:
            pts += [(v, prev), (v, p)]
            prev = p
        pts.append((x_max, prev))
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        parts.append(f'<text x="{width - pad - 4}" y="{pad + 14 * (n + 1)}" text-anchor="end" '
                     f'fill="{color}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
