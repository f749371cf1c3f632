"""Minimal trainable network kit with fake quantisation."""

from .layers import Conv3x3, Dense, Flatten, Layer, ReLU, SeparableConv, TransposeConv2x2
from .network import (
    INPUT,
    Network,
    apply_quantization,
    backward,
    calibrate,
    clear_quantization,
    forward,
    load_weights,
    network_from_bytes,
    network_to_bytes,
    predict,
    save_weights,
    sgd_step,
)
from .quant import QuantConfig, QuantizationWarning, RangeTracker, fake_quant, quantize_dequantize

__all__ = [
    "Conv3x3", "Dense", "Flatten", "Layer", "ReLU", "SeparableConv", "TransposeConv2x2",
    "INPUT", "Network", "apply_quantization", "backward", "calibrate", "clear_quantization",
    "forward", "load_weights", "network_from_bytes", "network_to_bytes", "predict", "save_weights", "sgd_step",
    "QuantConfig", "QuantizationWarning", "RangeTracker", "fake_quant", "quantize_dequantize",
]
