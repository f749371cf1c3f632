"""Central finite-difference checks of layer gradients."""

from __future__ import annotations

import numpy as np

from .layers import Conv3x3, Dense, Flatten, ReLU, SeparableConv, TransposeConv2x2


def relative_error(a, b):
    """``|a - b| / max(|a|, |b|)`` with Euclidean norms; 0 when both vanish."""
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def _numeric(f, x, eps):
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return g


def check_layer(layer, x, rng, eps=1e-4):
    """Relative errors of the analytic input and parameter gradients.

    The scalar objective is ``sum(forward(x) * r)`` for a fixed random ``r``.
    Returns ``{"x": err, <param>: err, ...}``.
    """
    x = np.asarray(x, dtype=np.float64)
    params = {k: v.astype(np.float64) for k, v in layer.params.items()}
    y, cache = layer.forward(x, params)
    r = rng.standard_normal(y.shape)
    dx, dparams = layer.backward(cache, r, params)

    def objective():
        return float(np.sum(layer.forward(x, params)[0] * r))

    errs = {"x": relative_error(dx, _numeric(objective, x, eps))}
    for name, p in params.items():
        errs[name] = relative_error(dparams[name], _numeric(objective, p, eps))
    return errs


def random_case(kind, rng):
    """A small randomly shaped layer of ``kind`` and a matching float64 input."""
    n = int(rng.integers(1, 3))
    cin, cout = (int(v) for v in rng.integers(1, 4, size=2))
    hw = int(rng.integers(3, 7))
    if kind == "conv3x3":
        layer, shape = Conv3x3(cin, cout, int(rng.integers(1, 3))), (n, cin, hw, hw + 1)
    elif kind == "separable":
        layer, shape = SeparableConv(cin, cout, int(rng.integers(1, 3))), (n, cin, hw + 1, hw)
    elif kind == "tconv2x2":
        layer, shape = TransposeConv2x2(cin, cout), (n, cin, hw, hw)
    elif kind == "dense":
        layer, shape = Dense(cin * 3, cout * 2), (n, cin * 3)
    elif kind == "relu":
        layer, shape = ReLU(), (n, cin, hw, hw)
    elif kind == "flatten":
        layer, shape = Flatten(), (n, cin, hw, hw)
    else:
        raise ValueError(f"unknown layer kind {kind!r}")
    layer.init(rng, np.float64)
    for name, p in layer.params.items():
        # non-zero biases so their gradients are exercised too
        layer.params[name] = p + rng.normal(0.0, 0.1, size=p.shape)
    x = rng.standard_normal(shape)
    if kind == "relu":
        # keep inputs away from the kink where the derivative is undefined
        x = np.where(np.abs(x) < 0.05, 0.05 * np.sign(x) + x, x)
    return layer, x


KINDS = ("conv3x3", "separable", "tconv2x2", "dense", "relu", "flatten")
