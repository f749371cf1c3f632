"""Layer kinds with exact forward/backward passes on NCHW arrays.

Each layer is stateless apart from its parameters; ``forward`` returns the output
and a cache that ``backward`` consumes. Parameters are passed in explicitly so
that the network can substitute fake-quantised weights.
"""

from __future__ import annotations

import numpy as np

from ..errors import StructuralError


def _he_uniform(rng, shape, fan_in, dtype, gain=2.0):
    limit = np.sqrt(3.0 * gain / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _shifted(xp, i, j, stride, ho, wo):
    return xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]


class Layer:
    kind = None
    code = 0
    # names of tensors that are weights (quantised) rather than biases
    weight_names = ()

    def __init__(self):
        self.params = {}
        self.quant = None
        self.name = self.kind

    def init(self, rng, dtype):
        pass

    def output_shape(self, in_shape):
        raise NotImplementedError

    def forward(self, x, params):
        raise NotImplementedError

    def backward(self, cache, dy, params):
        raise NotImplementedError

    def config(self):
        """Integer hyper-parameters, serialised in this order."""
        return ()

    def _check(self, x, channels):
        if x.ndim != 4 or x.shape[1] != channels:
            raise StructuralError(f"{self.name}: expected [N, {channels}, H, W], got {list(x.shape)}")

    def __repr__(self):
        return f"{type(self).__name__}{self.config()}"


class Conv3x3(Layer):
    kind = "conv3x3"
    code = 1
    weight_names = ("W",)

    def __init__(self, cin, cout, stride=1):
        super().__init__()
        if stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        self.cin, self.cout, self.stride = cin, cout, stride

    def config(self):
        return (self.cin, self.cout, self.stride)

    def init(self, rng, dtype):
        self.params = {
            "W": _he_uniform(rng, (self.cout, self.cin, 3, 3), self.cin * 9, dtype),
            "b": np.zeros(self.cout, dtype=dtype),
        }

    def output_shape(self, s):
        c, h, w = s
        if c != self.cin:
            raise StructuralError(f"{self.name}: expects {self.cin} channels, got {c}")
        return (self.cout, (h - 1) // self.stride + 1, (w - 1) // self.stride + 1)

    def forward(self, x, params):
        self._check(x, self.cin)
        n, c, h, w = x.shape
        s = self.stride
        ho, wo = (h - 1) // s + 1, (w - 1) // s + 1
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        cols = np.stack([_shifted(xp, i, j, s, ho, wo) for i in range(3) for j in range(3)], axis=2)
        cols = cols.reshape(n, c * 9, ho * wo)
        Wm = params["W"].reshape(self.cout, c * 9)
        y = np.matmul(Wm, cols) + params["b"][None, :, None]
        return y.reshape(n, self.cout, ho, wo), (cols, x.shape)

    def backward(self, cache, dy, params):
        cols, (n, c, h, w) = cache
        s = self.stride
        ho, wo = dy.shape[2], dy.shape[3]
        dy2 = dy.reshape(n, self.cout, ho * wo)
        Wm = params["W"].reshape(self.cout, c * 9)
        dW = np.matmul(dy2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(params["W"].shape)
        db = dy2.sum(axis=(0, 2))
        dcols = np.matmul(Wm.T, dy2).reshape(n, c, 9, ho, wo)
        dxp = np.zeros((n, c, h + 2, w + 2), dtype=dy.dtype)
        for k in range(9):
            i, j = divmod(k, 3)
            _shifted(dxp, i, j, s, ho, wo)[...] += dcols[:, :, k]
        return dxp[:, :, 1:-1, 1:-1], {"W": dW, "b": db}


class SeparableConv(Layer):
    """Depthwise 3x3 (stride 1 or 2, no bias) followed by a pointwise 1x1 with bias."""

    kind = "sepconv"
    code = 2
    weight_names = ("dw", "pw")

    def __init__(self, cin, cout, stride=1):
        super().__init__()
        if stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        self.cin, self.cout, self.stride = cin, cout, stride

    def config(self):
        return (self.cin, self.cout, self.stride)

    def init(self, rng, dtype):
        self.params = {
            # unit gain on the depthwise part: no ReLU between it and the pointwise
            "dw": _he_uniform(rng, (self.cin, 3, 3), 9, dtype, gain=1.0),
            "pw": _he_uniform(rng, (self.cout, self.cin), self.cin, dtype),
            "b": np.zeros(self.cout, dtype=dtype),
        }

    def output_shape(self, s):
        c, h, w = s
        if c != self.cin:
            raise StructuralError(f"{self.name}: expects {self.cin} channels, got {c}")
        return (self.cout, (h - 1) // self.stride + 1, (w - 1) // self.stride + 1)

    def forward(self, x, params):
        self._check(x, self.cin)
        n, c, h, w = x.shape
        s = self.stride
        ho, wo = (h - 1) // s + 1, (w - 1) // s + 1
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        dw = params["dw"]
        z = np.zeros((n, c, ho, wo), dtype=x.dtype)
        for k in range(9):
            i, j = divmod(k, 3)
            z += _shifted(xp, i, j, s, ho, wo) * dw[None, :, i, j, None, None]
        zf = z.reshape(n, c, ho * wo)
        y = np.matmul(params["pw"], zf) + params["b"][None, :, None]
        return y.reshape(n, self.cout, ho, wo), (xp, zf, x.shape)

    def backward(self, cache, dy, params):
        xp, zf, (n, c, h, w) = cache
        s = self.stride
        ho, wo = dy.shape[2], dy.shape[3]
        dy2 = dy.reshape(n, self.cout, ho * wo)
        dpw = np.matmul(dy2, zf.transpose(0, 2, 1)).sum(axis=0)
        db = dy2.sum(axis=(0, 2))
        dz = np.matmul(params["pw"].T, dy2).reshape(n, c, ho, wo)
        ddw = np.empty_like(params["dw"])
        dxp = np.zeros_like(xp)
        dw = params["dw"]
        for k in range(9):
            i, j = divmod(k, 3)
            ddw[:, i, j] = (_shifted(xp, i, j, s, ho, wo) * dz).sum(axis=(0, 2, 3))
            _shifted(dxp, i, j, s, ho, wo)[...] += dz * dw[None, :, i, j, None, None]
        return dxp[:, :, 1:-1, 1:-1], {"dw": ddw, "pw": dpw, "b": db}


class TransposeConv2x2(Layer):
    """2x2 kernel, stride 2: every input pixel expands to a 2x2 output block."""

    kind = "tconv2x2"
    code = 3
    weight_names = ("W",)

    def __init__(self, cin, cout):
        super().__init__()
        self.cin, self.cout = cin, cout

    def config(self):
        return (self.cin, self.cout)

    def init(self, rng, dtype):
        self.params = {
            "W": _he_uniform(rng, (self.cin, self.cout, 2, 2), self.cin, dtype),
            "b": np.zeros(self.cout, dtype=dtype),
        }

    def output_shape(self, s):
        c, h, w = s
        if c != self.cin:
            raise StructuralError(f"{self.name}: expects {self.cin} channels, got {c}")
        return (self.cout, 2 * h, 2 * w)

    def _wm(self, W):
        return W.transpose(1, 2, 3, 0).reshape(self.cout * 4, self.cin)

    def forward(self, x, params):
        self._check(x, self.cin)
        n, c, h, w = x.shape
        xf = x.reshape(n, c, h * w)
        z = np.matmul(self._wm(params["W"]), xf).reshape(n, self.cout, 2, 2, h, w)
        y = z.transpose(0, 1, 4, 2, 5, 3).reshape(n, self.cout, 2 * h, 2 * w)
        y = y + params["b"][None, :, None, None]
        return y, (xf, x.shape)

    def backward(self, cache, dy, params):
        xf, (n, c, h, w) = cache
        dz = dy.reshape(n, self.cout, h, 2, w, 2).transpose(0, 1, 3, 5, 2, 4)
        dz = dz.reshape(n, self.cout * 4, h * w)
        dWm = np.matmul(dz, xf.transpose(0, 2, 1)).sum(axis=0)
        dW = dWm.reshape(self.cout, 2, 2, self.cin).transpose(3, 0, 1, 2)
        db = dy.sum(axis=(0, 2, 3))
        dx = np.matmul(self._wm(params["W"]).T, dz).reshape(n, c, h, w)
        return dx, {"W": np.ascontiguousarray(dW), "b": db}


class ReLU(Layer):
    kind = "relu"
    code = 4

    def output_shape(self, s):
        return s

    def forward(self, x, params):
        mask = x > 0
        return x * mask, mask

    def backward(self, cache, dy, params):
        return dy * cache, {}


class Dense(Layer):
    kind = "dense"
    code = 5
    weight_names = ("W",)

    def __init__(self, fin, fout):
        super().__init__()
        self.fin, self.fout = fin, fout

    def config(self):
        return (self.fin, self.fout)

    def init(self, rng, dtype):
        self.params = {
            "W": _he_uniform(rng, (self.fout, self.fin), self.fin, dtype),
            "b": np.zeros(self.fout, dtype=dtype),
        }

    def output_shape(self, s):
        if s != (self.fin,):
            raise StructuralError(f"{self.name}: expects ({self.fin},), got {s}")
        return (self.fout,)

    def forward(self, x, params):
        if x.ndim != 2 or x.shape[1] != self.fin:
            raise StructuralError(f"{self.name}: expected [N, {self.fin}], got {list(x.shape)}")
        return x @ params["W"].T + params["b"], x

    def backward(self, cache, dy, params):
        x = cache
        return dy @ params["W"], {"W": dy.T @ x, "b": dy.sum(axis=0)}


class Flatten(Layer):
    kind = "flatten"
    code = 6

    def output_shape(self, s):
        return (int(np.prod(s)),)

    def forward(self, x, params):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, dy, params):
        return dy.reshape(cache), {}


LAYER_TYPES = {cls.code: cls for cls in (Conv3x3, SeparableConv, TransposeConv2x2, ReLU, Dense, Flatten)}
