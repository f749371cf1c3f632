"""Desk-scale network architectures for the two keypoint heads.

Both share a MobileNet-style encoder (a stride-2 conv followed by separable
convs) that reduces a ``S x S`` ROI to ``S/16 x S/16``. The coordinate head
flattens into two dense layers; the heatmap head decodes back to ``S/4`` with
two 2x2 transpose convs.
"""

from __future__ import annotations

from .. import nn
from ..keypoints import NUM_KEYPOINTS


def _encoder(channels):
    return [
        nn.Conv3x3(channels, 16, 2), nn.ReLU(),
        nn.SeparableConv(16, 32, 1), nn.ReLU(),
        nn.SeparableConv(32, 32, 2), nn.ReLU(),
        nn.SeparableConv(32, 64, 1), nn.ReLU(),
        nn.SeparableConv(64, 64, 2), nn.ReLU(),
        nn.SeparableConv(64, 64, 1), nn.ReLU(),
        nn.SeparableConv(64, 96, 2), nn.ReLU(),
        nn.SeparableConv(96, 96, 1), nn.ReLU(),
    ]


def heatmap_network(channels, roi_size, seed=0, keypoints=NUM_KEYPOINTS):
    layers = _encoder(channels) + [
        nn.TransposeConv2x2(96, 64), nn.ReLU(),
        nn.SeparableConv(64, 64, 1), nn.ReLU(),
        nn.TransposeConv2x2(64, 32), nn.ReLU(),
        nn.Conv3x3(32, 32, 1), nn.ReLU(),
        nn.Conv3x3(32, keypoints, 1),
    ]
    return nn.Network(layers, (channels, roi_size, roi_size), "heatmap").init(seed)


def coordinate_network(channels, roi_size, seed=0, keypoints=NUM_KEYPOINTS, hidden=128):
    side = roi_size // 16
    layers = _encoder(channels) + [
        nn.Flatten(),
        nn.Dense(96 * side * side, hidden), nn.ReLU(),
        nn.Dense(hidden, 2 * keypoints),
    ]
    return nn.Network(layers, (channels, roi_size, roi_size), "coordinate").init(seed)


def build_network(head, channels, roi_size, seed=0):
    if head == "heatmap":
        return heatmap_network(channels, roi_size, seed)
    if head == "coordinate":
        return coordinate_network(channels, roi_size, seed)
    raise ValueError(f"unknown head {head!r}")
