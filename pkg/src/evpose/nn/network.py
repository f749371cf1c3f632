"""Sequential networks, fake-quantised forward passes, SGD and the NNW1 weight file."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import EventFormatError, StateError, StructuralError, TrainingError
from .layers import LAYER_TYPES, Layer, ReLU
from .quant import QuantConfig, QuantizationWarning, RangeTracker, fake_quant

HEADS = ("coordinate", "heatmap")
MODES = ("float", "fake_quant")
INPUT = -1  # key of the network-input quantisation point


class Network:
    def __init__(self, layers, input_shape, head, dtype=np.float32):
        if head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.head = head
        self.dtype = np.dtype(dtype)
        self.input_quant = None
        # calibrated activation ranges, keyed by layer index (INPUT for the input)
        self.ranges = {}
        self.trackers = {}
        for i, layer in enumerate(self.layers):
            layer.name = f"{layer.kind}[{i}]"
        self.output_shape = self._infer_shapes()

    def _infer_shapes(self):
        s = self.input_shape
        for layer in self.layers:
            s = layer.output_shape(s)
        return s

    def init(self, seed):
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init(rng, self.dtype)
        return self

    def astype(self, dtype):
        self.dtype = np.dtype(dtype)
        for layer in self.layers:
            layer.params = {k: v.astype(self.dtype) for k, v in layer.params.items()}
        return self

    def param_count(self):
        return sum(p.size for layer in self.layers for p in layer.params.values())

    def quant_points(self):
        pts = [i for i, l in enumerate(self.layers) if l.quant is not None and l.quant.act_bits]
        if self.input_quant is not None and self.input_quant.act_bits:
            pts.insert(0, INPUT)
        return pts

    def __repr__(self):
        body = ", ".join(repr(l) for l in self.layers)
        return f"Network({self.head}, in={self.input_shape}, [{body}])"


@dataclass
class Cache:
    layer_caches: list
    weight_masks: list
    act_masks: dict
    mode: str


def _act_bits(net, key):
    q = net.input_quant if key == INPUT else net.layers[key].quant
    return None if q is None else q.act_bits


def _stored_range(rng):
    # ranges are kept at the f32 precision of the weight file so a reloaded
    # network quantises exactly like the one that was saved
    return None if rng is None else tuple(float(np.float32(v)) for v in rng)


def _quantize_act(net, key, x, train, masks):
    bits = _act_bits(net, key)
    if not bits:
        return x
    if train:
        net.trackers.setdefault(key, RangeTracker()).update(x)
        net.ranges[key] = _stored_range(net.trackers[key].range)
    if key not in net.ranges:
        raise StateError(f"quantisation point {key} has no calibrated range; run calibrate() first")
    y, mask = fake_quant(x, bits, "asymmetric", net.ranges[key])
    masks[key] = mask
    return y


def _layer_params(layer, mode):
    if mode != "fake_quant" or layer.quant is None or not layer.quant.weight_bits:
        return layer.params, None
    params, masks = dict(layer.params), {}
    for name in layer.weight_names:
        w = layer.params[name]
        max_abs = float(np.max(np.abs(w)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", QuantizationWarning)
            params[name], masks[name] = fake_quant(w, layer.quant.weight_bits, "symmetric", max_abs)
    return params, masks


def forward(net, x, mode="float", train=False, keep_cache=True):
    """Run the network. Returns ``(output, cache)``; ``cache`` is None if not kept.

    ``train=True`` in fake-quant mode updates each quantisation point's EMA range
    from the current batch before quantising.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    x = np.asarray(x, dtype=net.dtype)
    if x.shape[1:] != net.input_shape:
        raise StructuralError(f"input: expected [N, {', '.join(map(str, net.input_shape))}], got {list(x.shape)}")
    quant = mode == "fake_quant"
    act_masks = {}
    if quant:
        x = _quantize_act(net, INPUT, x, train, act_masks)
    caches, wmasks = [], []
    for i, layer in enumerate(net.layers):
        params, wm = _layer_params(layer, mode)
        x, c = layer.forward(x, params)
        if quant:
            x = _quantize_act(net, i, x, train, act_masks)
        if keep_cache:
            caches.append((c, params))
            wmasks.append(wm)
    if not np.all(np.isfinite(x)):
        raise TrainingError("non-finite network output")
    return x, (Cache(caches, wmasks, act_masks, mode) if keep_cache else None)


def predict(net, x, mode="float", batch=256):
    outs = [forward(net, x[i:i + batch], mode, keep_cache=False)[0] for i in range(0, len(x), batch)]
    return np.concatenate(outs) if outs else np.zeros((0, *net.output_shape), dtype=net.dtype)


def backward(net, cache, grad_out):
    """Parameter gradients (list of dicts, one per layer) and the input gradient.

    In fake-quant mode the straight-through estimator passes gradients where the
    pre-quantisation value was inside the clamp range and blocks them elsewhere.
    """
    if cache is None or not cache.layer_caches:
        raise StateError("backward() needs the cache of a forward pass run with keep_cache=True")
    g = np.asarray(grad_out, dtype=net.dtype)
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if i in cache.act_masks:
            g = g * cache.act_masks[i]
        lc, params = cache.layer_caches[i]
        g, pg = layer.backward(lc, g, params)
        wm = cache.weight_masks[i]
        if wm:
            pg = {k: (v * wm[k] if k in wm else v) for k, v in pg.items()}
        grads[i] = pg
    if INPUT in cache.act_masks:
        g = g * cache.act_masks[INPUT]
    return grads, g


def sgd_step(net, grads, lr, momentum=0.0, state=None):
    """``v = momentum * v + g``; ``p -= lr * v``. Returns the velocity state."""
    state = {} if state is None else state
    for i, (layer, pg) in enumerate(zip(net.layers, grads)):
        for name, g in pg.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in {layer.name}.{name}")
            key = (i, name)
            v = state.get(key)
            v = g.astype(net.dtype) if v is None else momentum * v + g
            state[key] = v
            layer.params[name] = (layer.params[name] - lr * v).astype(net.dtype)
    return state


def calibrate(net, batches):
    """Set each quantisation point's range to the EMA (decay 0.99) of per-batch (min, max).

    Activations are observed on the float path. Returns ``{point: (min, max)}``.
    """
    trackers = {}
    points = net.quant_points()
    for xb in batches:
        x = np.asarray(xb, dtype=net.dtype)
        if INPUT in points:
            trackers.setdefault(INPUT, RangeTracker()).update(x)
        for i, layer in enumerate(net.layers):
            x, _ = layer.forward(x, layer.params)
            if i in points:
                trackers.setdefault(i, RangeTracker()).update(x)
    if not trackers:
        raise ValueError("calibrate() needs at least one batch")
    for key, tr in trackers.items():
        if tr.degenerate:
            warnings.warn(f"quantisation point {key} has a degenerate range {tr.range}", QuantizationWarning)
    net.trackers = trackers
    net.ranges = {k: _stored_range(tr.range) for k, tr in trackers.items()}
    return dict(net.ranges)


def apply_quantization(net, weight_bits, act_bits, first_layer_bits=None):
    """Attach QuantConfigs for a weights/activations regime.

    Weighted layers get ``weight_bits``; ReLU outputs and the final output get
    ``act_bits``. ``first_layer_bits`` (e.g. 8) overrides the input and first
    weighted layer precision.
    """
    first = next(i for i, l in enumerate(net.layers) if l.weight_names)
    last = len(net.layers) - 1
    net.input_quant = QuantConfig(None, first_layer_bits or act_bits)
    for i, layer in enumerate(net.layers):
        wb = weight_bits
        if i == first and first_layer_bits:
            wb = first_layer_bits
        if layer.weight_names:
            layer.quant = QuantConfig(wb, act_bits if i == last else None)
        elif isinstance(layer, ReLU) or i == last:
            layer.quant = QuantConfig(None, act_bits)
        else:
            layer.quant = None
    net.ranges, net.trackers = {}, {}
    return net


def clear_quantization(net):
    net.input_quant = None
    for layer in net.layers:
        layer.quant = None
    net.ranges, net.trackers = {}, {}
    return net


# ---------------------------------------------------------------------------
# NNW1 weight files

NNW_MAGIC = b"NNW1"
NNW_VERSION = 1
_HEAD = struct.Struct("<4sBBHHHH")  # magic, version, head, C, H, W, layer count


class _Reader:
    def __init__(self, buf):
        self.buf, self.off = buf, 0

    def unpack(self, fmt):
        st = struct.Struct("<" + fmt)
        if self.off + st.size > len(self.buf):
            raise EventFormatError("truncated NNW1 file", self.off)
        vals = st.unpack_from(self.buf, self.off)
        self.off += st.size
        return vals

    def floats(self, n):
        if self.off + 4 * n > len(self.buf):
            raise EventFormatError("truncated NNW1 parameter block", self.off)
        a = np.frombuffer(self.buf, dtype="<f4", count=n, offset=self.off)
        self.off += 4 * n
        return a


def _quant_block(q, rng):
    if q is None:
        return struct.pack("<B", 0)
    lo, hi = rng if rng is not None else (np.nan, np.nan)
    return struct.pack("<BBBff", 1, q.weight_bits or 0, q.act_bits or 0, lo, hi)


def _read_quant(r):
    (flag,) = r.unpack("B")
    if not flag:
        return None, None
    wb, ab, lo, hi = r.unpack("BBff")
    rng = None if np.isnan(lo) else (float(lo), float(hi))
    return QuantConfig(wb or None, ab or None), rng


def network_to_bytes(net):
    out = [_HEAD.pack(NNW_MAGIC, NNW_VERSION, HEADS.index(net.head), *net.input_shape, len(net.layers))]
    out.append(_quant_block(net.input_quant, net.ranges.get(INPUT)))
    for i, layer in enumerate(net.layers):
        cfg = layer.config()
        out.append(struct.pack(f"<BB{len(cfg)}H", layer.code, len(cfg), *cfg))
        for name in sorted(layer.params):
            p = layer.params[name]
            out.append(struct.pack(f"<B{p.ndim}I", p.ndim, *p.shape))
            out.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
        out.append(_quant_block(layer.quant, net.ranges.get(i)))
    return b"".join(out)


def network_from_bytes(buf, dtype=np.float32):
    r = _Reader(buf)
    magic, version, head, c, h, w, nlayers = r.unpack("4sBBHHHH")
    if magic != NNW_MAGIC:
        raise EventFormatError(f"bad magic {magic!r}", 0)
    if version != NNW_VERSION:
        raise EventFormatError(f"unsupported NNW version {version}", 4)
    if head >= len(HEADS):
        raise EventFormatError(f"unknown head {head}", 5)
    in_q, in_rng = _read_quant(r)
    layers, ranges = [], {}
    if in_rng is not None:
        ranges[INPUT] = in_rng
    for i in range(nlayers):
        start = r.off
        code, ncfg = r.unpack("BB")
        if code not in LAYER_TYPES:
            raise EventFormatError(f"unknown layer kind {code}", start)
        cfg = r.unpack(f"{ncfg}H") if ncfg else ()
        layer: Layer = LAYER_TYPES[code](*cfg)
        layer.init(np.random.default_rng(0), dtype)
        params = {}
        for name in sorted(layer.params):
            pos = r.off
            (ndim,) = r.unpack("B")
            shape = r.unpack(f"{ndim}I")
            if tuple(shape) != layer.params[name].shape:
                raise EventFormatError(
                    f"layer {i} {name}: stored shape {shape} != expected {layer.params[name].shape}", pos
                )
            params[name] = r.floats(int(np.prod(shape))).reshape(shape).astype(dtype)
        layer.params = params
        layer.quant, rng = _read_quant(r)
        if rng is not None:
            ranges[i] = rng
        layers.append(layer)
    if r.off != len(buf):
        raise EventFormatError("trailing bytes after last layer", r.off)
    try:
        net = Network(layers, (c, h, w), HEADS[head], dtype)
    except StructuralError as exc:
        raise EventFormatError(f"inconsistent layer shapes: {exc}", 0) from exc
    net.input_quant = in_q
    net.ranges = ranges
    return net


def save_weights(net, path):
    Path(path).write_bytes(network_to_bytes(net))


def load_weights(path, dtype=np.float32):
    return network_from_bytes(Path(path).read_bytes(), dtype)
