"""Keypoint heads: target encoding, MSE loss, decoding, top-k selection and an oracle predictor."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientPointsError, PredictionError
from .representations import RoiAffine

NUM_KEYPOINTS = 8
DEFAULT_SIGMA = 2.0
MIN_PNP_POINTS = 4


@dataclass(frozen=True)
class KeypointSet:
    """``K`` 2D points with confidences, validity flags and their model indices."""

    points: np.ndarray
    confidence: np.ndarray
    valid: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        n = len(pts)
        conf = np.asarray(self.confidence, dtype=np.float64).reshape(n)
        valid = np.asarray(self.valid, dtype=bool).reshape(n)
        if np.any(~np.isfinite(pts[valid])):
            raise PredictionError("non-finite keypoint coordinates")
        if np.any((conf < 0) | (conf > 1)):
            raise ValueError("confidence outside [0, 1]")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "confidence", conf)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.int64).reshape(n))

    @classmethod
    def from_points(cls, points, confidence=None):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        n = len(pts)
        conf = np.ones(n) if confidence is None else confidence
        return cls(pts, conf, np.isfinite(pts).all(axis=1), np.arange(n))

    def __len__(self):
        return len(self.points)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return KeypointSet(self.points[idx], self.confidence[idx], self.valid[idx], self.indices[idx])

    def mapped(self, fn):
        """Same set with coordinates transformed by ``fn`` (e.g. an ROI affine map)."""
        return KeypointSet(fn(self.points), self.confidence, self.valid, self.indices)

    def to_records(self):
        return [
            {"index": int(i), "u": float(p[0]), "v": float(p[1]), "confidence": float(c), "valid": bool(v)}
            for i, p, c, v in zip(self.indices, self.points, self.confidence, self.valid)
        ]

    def to_json(self):
        return json.dumps(self.to_records())

    @classmethod
    def from_records(cls, recs):
        return cls(
            [[r["u"], r["v"]] for r in recs],
            [r["confidence"] for r in recs],
            [r["valid"] for r in recs],
            [r["index"] for r in recs],
        )


# ---------------------------------------------------------------------------
# coordinate head


def encode_coordinate_target(keypoints_roi, roi_size):
    """``(u1, v1, ..., uK, vK) / roi_size``. Values outside [0, 1] mean off-ROI points."""
    return np.asarray(keypoints_roi, dtype=np.float64).reshape(-1) / float(roi_size)


def decode_coordinates(output, roi_size, roi_affine=None):
    """Map a ``2K`` regression vector back to sensor pixels. Confidence is always 1."""
    out = np.asarray(output, dtype=np.float64).reshape(-1)
    if out.size % 2:
        raise PredictionError(f"coordinate output has odd length {out.size}")
    if not np.all(np.isfinite(out)):
        raise PredictionError("non-finite coordinate prediction")
    pts = out.reshape(-1, 2) * float(roi_size)
    if roi_affine is not None:
        pts = roi_affine.to_sensor(pts)
    return KeypointSet.from_points(pts)


# ---------------------------------------------------------------------------
# heatmap head


def roi_to_heatmap(pts, roi_size, heatmap_size):
    return (np.asarray(pts, dtype=np.float64) + 0.5) * (heatmap_size / roi_size) - 0.5


def heatmap_to_roi(pts, roi_size, heatmap_size):
    return (np.asarray(pts, dtype=np.float64) + 0.5) * (roi_size / heatmap_size) - 0.5


def encode_heatmap_target(keypoints_roi, heatmap_size, sigma=DEFAULT_SIGMA, roi_size=None):
    """Unnormalised Gaussians ``exp(-d^2 / 2 sigma^2)``, one channel per keypoint.

    ``keypoints_roi`` are ROI pixels (``roi_size`` given) or heatmap cells
    (``roi_size=None``). Keypoints outside the heatmap give an all-zero channel.
    Returns ``(stack [K, H, H], valid [K])``.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    pts = np.asarray(keypoints_roi, dtype=np.float64).reshape(-1, 2)
    if roi_size is not None:
        pts = roi_to_heatmap(pts, roi_size, heatmap_size)
    grid = np.arange(heatmap_size, dtype=np.float64)
    valid = (
        np.isfinite(pts).all(axis=1)
        & (pts[:, 0] >= -0.5) & (pts[:, 0] < heatmap_size - 0.5)
        & (pts[:, 1] >= -0.5) & (pts[:, 1] < heatmap_size - 0.5)
    )
    safe = np.where(valid[:, None], pts, 0.0)
    gx = np.exp(-((grid[None, :] - safe[:, 0:1]) ** 2) / (2 * sigma**2))
    gy = np.exp(-((grid[None, :] - safe[:, 1:2]) ** 2) / (2 * sigma**2))
    stack = gy[:, :, None] * gx[:, None, :]
    stack[~valid] = 0.0
    return stack, valid


def decode_heatmaps(stack, roi_affine=None, roi_size=None):
    """Argmax (first in row-major order) refined by the value-weighted 3x3 centroid.

    Coordinates come back in heatmap cells, in ROI pixels if ``roi_size`` is
    given, and in sensor pixels if ``roi_affine`` is given too. Confidence is
    the peak value clipped to [0, 1]; channels whose peak is <= 0 are invalid.
    """
    stack = np.asarray(stack, dtype=np.float64)
    k, h, w = stack.shape
    flat = stack.reshape(k, -1)
    arg = np.argmax(flat, axis=1)
    peak = flat[np.arange(k), arg]
    rows, cols = np.divmod(arg, w)
    pts = np.zeros((k, 2))
    for c in range(k):
        r0, r1 = max(rows[c] - 1, 0), min(rows[c] + 2, h)
        c0, c1 = max(cols[c] - 1, 0), min(cols[c] + 2, w)
        patch = np.clip(stack[c, r0:r1, c0:c1], 0.0, None)
        total = patch.sum()
        if total > 0:
            yy, xx = np.mgrid[r0:r1, c0:c1]
            pts[c] = [(patch * xx).sum() / total, (patch * yy).sum() / total]
        else:
            pts[c] = [cols[c], rows[c]]
    valid = peak > 0
    if roi_size is not None:
        pts = heatmap_to_roi(pts, roi_size, w)
        if roi_affine is not None:
            pts = roi_affine.to_sensor(pts)
    conf = np.where(valid, np.clip(peak, 0.0, 1.0), 0.0)
    return KeypointSet(pts, conf, valid, np.arange(k))


# ---------------------------------------------------------------------------
# loss, selection and oracle


def loss(pred, target, head_kind=None):
    """Mean squared error and its gradient w.r.t. ``pred`` (same for both heads)."""
    pred = np.asarray(pred)
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.mean(diff.astype(np.float64) ** 2)), (2.0 / n) * diff


def select_top_k(kps, k):
    """The ``k`` most confident valid keypoints (ties go to the lower index).

    Returns the subset in ascending index order. Fewer than ``k`` valid points
    yields all of them; fewer than four raises InsufficientPointsError.
    """
    if not MIN_PNP_POINTS <= k <= len(kps):
        raise ValueError(f"k must be in [{MIN_PNP_POINTS}, {len(kps)}]")
    valid = np.flatnonzero(kps.valid)
    if valid.size < MIN_PNP_POINTS:
        raise InsufficientPointsError(f"only {valid.size} valid keypoints")
    order = valid[np.lexsort((valid, -kps.confidence[valid]))]
    return kps.subset(np.sort(order[:k]))


def oracle_predict(gt_keypoints, noise_sigma=0.0, seed=0):
    """Ground-truth keypoints plus isotropic Gaussian pixel noise, confidence 1."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    pts = np.asarray(gt_keypoints, dtype=np.float64).reshape(-1, 2)
    if noise_sigma > 0:
        pts = pts + np.random.default_rng(seed).normal(0.0, noise_sigma, size=pts.shape)
    return KeypointSet.from_points(pts)


def identity_affine():
    return RoiAffine.identity()
