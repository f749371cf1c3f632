"""Fake quantisation (quantise then dequantise) with straight-through gradients."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

VALID_BITS = (4, 8)


class QuantizationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class QuantConfig:
    """Bit widths for one layer. ``None`` leaves that tensor in floating point.

    Weights use symmetric per-tensor scales; outputs use asymmetric per-tensor
    scales from a calibrated ``(min, max)`` range.
    """

    weight_bits: int | None = None
    act_bits: int | None = None

    def __post_init__(self):
        for b in (self.weight_bits, self.act_bits):
            if b is not None and b not in VALID_BITS:
                raise ValueError(f"bit width must be one of {VALID_BITS}, got {b}")


def symmetric_params(max_abs, bits):
    levels = 2 ** (bits - 1) - 1
    return max_abs / levels, 2 ** (bits - 1)


def asymmetric_params(lo, hi, bits):
    scale = (hi - lo) / (2**bits - 1)
    return scale, np.round(-lo / scale)


def fake_quant(x, bits, scheme, calibration):
    """Quantise-dequantise ``x``; also return the straight-through pass mask.

    ``calibration`` is ``max|x|`` for ``scheme="symmetric"`` and ``(min, max)``
    for ``scheme="asymmetric"``. The mask is True where ``x`` lies inside the
    clamp range.
    """
    x = np.asarray(x)
    if scheme == "symmetric":
        max_abs = float(calibration)
        if not max_abs > 0:
            warnings.warn("degenerate symmetric calibration; output zeroed", QuantizationWarning)
            return np.zeros_like(x), np.zeros(x.shape, dtype=bool)
        scale, zero = symmetric_params(max_abs, bits)
    elif scheme == "asymmetric":
        lo, hi = (float(c) for c in calibration)
        if not (np.isfinite(lo) and np.isfinite(hi)) or not hi > lo:
            warnings.warn(f"degenerate activation range ({lo}, {hi}); output zeroed", QuantizationWarning)
            return np.zeros_like(x), np.zeros(x.shape, dtype=bool)
        scale, zero = asymmetric_params(lo, hi, bits)
    else:
        raise ValueError(f"unknown quantisation scheme {scheme!r}")
    top = 2**bits - 1
    code = x / x.dtype.type(scale) + x.dtype.type(zero)
    mask = (code >= 0) & (code <= top)
    q = np.clip(np.round(code), 0, top)
    return ((q - zero) * scale).astype(x.dtype, copy=False), mask


def quantize_dequantize(x, bits, scheme, calibration):
    """``(clamp(round(x / s + z), 0, 2**bits - 1) - z) * s``."""
    return fake_quant(x, bits, scheme, calibration)[0]


def step_size(bits, scheme, calibration):
    if scheme == "symmetric":
        return symmetric_params(float(calibration), bits)[0]
    lo, hi = calibration
    return asymmetric_params(float(lo), float(hi), bits)[0]


class RangeTracker:
    """Exponential moving average of per-batch ``(min, max)``; the first batch initialises it."""

    def __init__(self, decay=0.99):
        self.decay = decay
        self.lo = None
        self.hi = None

    def update(self, x):
        lo, hi = float(np.min(x)), float(np.max(x))
        if self.lo is None:
            self.lo, self.hi = lo, hi
        else:
            d = self.decay
            self.lo = d * self.lo + (1 - d) * lo
            self.hi = d * self.hi + (1 - d) * hi
        return self

    @property
    def range(self):
        return None if self.lo is None else (self.lo, self.hi)

    @property
    def degenerate(self):
        return self.lo is not None and not self.hi > self.lo
