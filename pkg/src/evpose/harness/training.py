"""Float training followed by optional quantisation-aware fine-tuning."""

from __future__ import annotations

import json
import math
import time
from pathlib import Path

import numpy as np

from .. import keypoints as kp
from .. import nn
from ..errors import TrainingError
from . import dataset
from .models import build_network

# per-head learning rates used when the config leaves ``train.lr`` unset
DEFAULT_LR = {"heatmap": 1.0, "coordinate": 0.05}


class TrainingDivergence(TrainingError):
    def __init__(self, stage, epoch, reason):
        super().__init__(f"training diverged in {stage} epoch {epoch}: {reason}")
        self.stage = stage
        self.epoch = epoch


def model_dir(out):
    return Path(out) / "models"


def model_path(out, config, regime=None):
    regime = regime or config.regime
    return model_dir(out) / f"{config.repr_kind.label}_{config.head}_{regime}_s{config.seed}.nnw"


def targets(config, kps_roi):
    if config.head == "heatmap":
        return np.array(
            [kp.encode_heatmap_target(k, config.heatmap_size, config.heatmap_sigma, config.roi_size)[0]
             for k in kps_roi], dtype=np.float32)
    return np.array([kp.encode_coordinate_target(k, config.roi_size) for k in kps_roi], dtype=np.float32)


def decode(config, outputs):
    """Network outputs to KeypointSets in ROI pixels."""
    if config.head == "heatmap":
        return [kp.decode_heatmaps(o, roi_size=config.roi_size) for o in outputs]
    return [kp.decode_coordinates(o, config.roi_size) for o in outputs]


def pck_on(config, net, split, mode="float"):
    """Mean PCK (ROI pixels, ``d = pck_fraction * roi_size``) over a split."""
    if len(split) == 0:
        return float("nan")
    out = nn.predict(net, split.x, mode)
    d = config.pck_fraction * config.roi_size
    hits = 0
    for pred, gt in zip(decode(config, out), split.keypoints_roi):
        dist = np.linalg.norm(pred.points - gt, axis=1)
        hits += int(np.count_nonzero(pred.valid & (dist <= d)))
    return hits / (len(split) * split.keypoints_roi.shape[1])


def _epochs(net, x, y, epochs, lr, momentum, batch, rng, mode, stage, log, evaluate):
    history = []
    state = None
    for ep in range(epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(x))
        losses = []
        for i in range(0, len(order), batch):
            b = order[i:i + batch]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    out, cache = nn.forward(net, x[b], mode, train=(mode == "fake_quant"))
                    loss, grad = kp.loss(out, y[b], net.head)
                    if not math.isfinite(loss):
                        raise TrainingError("non-finite loss")
                    grads, _ = nn.backward(net, cache, grad)
                    state = nn.sgd_step(net, grads, lr, momentum, state)
            except TrainingError as e:
                raise TrainingDivergence(stage, ep, str(e)) from None
            losses.append(loss * len(b))
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                val = evaluate()
        except TrainingError as e:
            raise TrainingDivergence(stage, ep, str(e)) from None
        entry = {
            "stage": stage, "epoch": ep, "loss": math.fsum(losses) / len(x),
            "val_pck": val, "seconds": time.perf_counter() - t0,
        }
        history.append(entry)
        log(f"[{stage}] epoch {ep:3d}  loss {entry['loss']:.6f}  val PCK {entry['val_pck']:.4f}")
    return history


def train(config, out, log=print, train_split=None, val_split=None, initial=None):
    """Train one (representation, head, regime) model and save weights and log.

    With a quantised regime the float model (trained here, or ``initial``) is
    calibrated and fine-tuned with fake quantisation. Returns ``(net, log_dict)``.
    """
    tc = config.train
    if train_split is None:
        train_split = dataset.load_split(config, out, "train")
    if val_split is None:
        val_split = dataset.load_split(config, out, "val")
    if len(train_split) == 0:
        raise TrainingError("training split is empty")
    x = train_split.x
    y = targets(config, train_split.keypoints_roi)
    lr = tc.lr if tc.lr is not None else DEFAULT_LR[config.head]
    history = []
    if initial is None:
        net = build_network(config.head, x.shape[1], config.roi_size, config.seed)
        rng = np.random.default_rng(config.seed)
        history += _epochs(net, x, y, tc.epochs, lr, tc.momentum, tc.batch, rng, "float", "float", log,
                           lambda: pck_on(config, net, val_split))
    else:
        net = initial
    float_pck = pck_on(config, net, val_split)
    result = {"val_pck_float": float_pck}
    wbits, abits = config.quant_bits
    if wbits is not None:
        nn.apply_quantization(net, wbits, abits, tc.first_layer_bits)
        rng = np.random.default_rng(config.seed + 1)
        order = rng.permutation(len(x))
        nn.calibrate(net, [x[order[i:i + tc.batch]] for i in range(0, min(len(x), tc.batch * tc.calibration_batches), tc.batch)])
        result["val_pck_quant_ptq"] = pck_on(config, net, val_split, "fake_quant")
        qat_lr = tc.qat_lr if tc.qat_lr is not None else 0.1 * lr
        history += _epochs(net, x, y, tc.qat_epochs, qat_lr, tc.momentum, tc.batch, rng, "fake_quant", "qat", log,
                           lambda: pck_on(config, net, val_split, "fake_quant"))
        result["val_pck_quant"] = pck_on(config, net, val_split, "fake_quant")
    path = model_path(out, config)
    path.parent.mkdir(parents=True, exist_ok=True)
    nn.save_weights(net, path)
    summary = {**config.provenance(), "representation": config.repr_kind.label, "head": config.head,
               "regime": config.regime, "lr": lr, "epochs": history, **result}
    path.with_suffix(".log.json").write_text(json.dumps(summary, indent=2) + "\n")
    return net, summary


def train_or_load(config, out, log=print):
    """Cached model for ``config``; trains the float parent first for quantised regimes."""
    path = model_path(out, config)
    if path.exists():
        return nn.load_weights(path)
    if config.regime == "float":
        return train(config, out, log)[0]
    parent = train_or_load(config.replace(regime="float"), out, log)
    return train(config, out, log, initial=parent)[0]
