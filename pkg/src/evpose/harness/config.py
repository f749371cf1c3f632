"""Experiment configuration: a JSON document with defaults for every field."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError
from ..representations import ReprKind

HEADS = ("coordinate", "heatmap")
REGIMES = {"float": (None, None), "w4a4": (4, 4), "w8a8": (8, 8)}
EVAL_MODES = ("network", "oracle")

# nominal attitude of the training distribution: Rx(0.6 rad) then Ry(0.5 rad)
_NOMINAL_Q = (0.9256373912272359, 0.2863331991006687, 0.23635402982999043, 0.07311286916773024)


@dataclass(frozen=True)
class DatasetConfig:
    """Synthetic trajectory set. ``scene`` (a scene file) overrides the sampler for a single trajectory."""

    trajectories: int = 600
    duration_s: float = 0.5
    model: str = "spacecraft"
    range_m: tuple = (3.0, 15.0)
    omega_deg: tuple = (2.0, 20.0)
    drift: tuple = (0.02, 0.1)
    attitude_spread_deg: float | None = 30.0
    nominal_q: tuple = _NOMINAL_Q
    substep_s: float = 1e-3
    contrast_rate: float = 1.0
    delta_t_us: int = 50_000
    roi_margin: float = 0.1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    lr: float | None = None  # None: per-head default
    momentum: float = 0.9
    batch: int = 32
    qat_epochs: int = 10
    qat_lr: float | None = None  # None: a tenth of the float learning rate
    first_layer_bits: int | None = 8
    calibration_batches: int = 20


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    scene: str | None = None
    representation: str = "LNES"
    head: str = "heatmap"
    regime: str = "float"
    roi_size: int = 64
    heatmap_size: int = 16
    heatmap_sigma: float = 1.5
    top_k: int = 8
    seed: int = 0
    split: tuple = (0.6, 0.2, 0.2)
    eval_mode: str = "network"
    oracle_noise_px: float = 0.0
    max_range_m: float = 30.0
    pck_fraction: float = 0.05
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    matrix_representations: tuple = ("E2F", "Hist2D", "LNES")
    matrix_regimes: tuple = (("coordinate", "float"), ("coordinate", "w4a4"), ("heatmap", "float"), ("heatmap", "w8a8"))
    matrix_top_k: tuple = (5, 8)
    bench_runs: int = 5

    def __post_init__(self):
        try:
            ReprKind.parse(self.representation)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {tuple(REGIMES)}, got {self.regime!r}")
        if self.eval_mode not in EVAL_MODES:
            raise ConfigError(f"eval_mode must be one of {EVAL_MODES}, got {self.eval_mode!r}")
        if len(self.split) != 3 or any(f < 0 for f in self.split) or not math.isclose(math.fsum(self.split), 1.0, abs_tol=1e-9):
            raise ConfigError(f"split fractions must be three non-negative numbers summing to 1, got {self.split}")
        if not 4 <= self.top_k <= 8:
            raise ConfigError("top_k must be in [4, 8]")
        if self.roi_size < 8 or self.roi_size % 16:
            raise ConfigError("roi_size must be a positive multiple of 16")
        if self.heatmap_size * 4 != self.roi_size:
            raise ConfigError("heatmap_size must be roi_size / 4")
        if self.heatmap_sigma <= 0 or self.pck_fraction <= 0 or self.max_range_m <= 0:
            raise ConfigError("heatmap_sigma, pck_fraction and max_range_m must be positive")
        tc = self.train
        if tc.epochs < 1 or tc.batch < 1 or any(v is not None and v <= 0 for v in (tc.lr, tc.qat_lr)):
            raise ConfigError("epochs, batch and learning rates must be positive")
        if self.dataset.trajectories < 1 or self.dataset.duration_s <= 0:
            raise ConfigError("dataset needs at least one trajectory of positive duration")
        for head, regime in self.matrix_regimes:
            if head not in HEADS or regime not in REGIMES:
                raise ConfigError(f"bad matrix regime {(head, regime)}")

    # -- serialisation -----------------------------------------------------

    def to_dict(self):
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d = dict(d)
        try:
            sub = {
                "dataset": DatasetConfig(**_tuples(d.pop("dataset", {}))),
                "train": TrainConfig(**d.pop("train", {})),
            }
            return cls(**_tuples(d), **sub)
        except TypeError as e:
            raise ConfigError(f"invalid config: {e}") from None

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from None
        return cls.from_dict(d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def config_hash(self):
        """SHA-256 of the canonical JSON form (first 16 hex digits)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def provenance(self):
        return {"config_hash": self.config_hash(), "seed": self.seed, "name": self.name}

    def data_key(self):
        """Hash of the fields that determine generated data, so caches can be shared."""
        blob = json.dumps(
            {"dataset": _plain(dataclasses.asdict(self.dataset)), "scene": self.scene, "seed": self.seed},
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    @property
    def repr_kind(self):
        return ReprKind.parse(self.representation)

    @property
    def quant_bits(self):
        return REGIMES[self.regime]


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _tuples(d):
    """JSON lists back to tuples so configs stay hashable and compare equal."""
    def conv(v):
        return tuple(conv(x) for x in v) if isinstance(v, list) else v
    return {k: conv(v) for k, v in d.items()}
