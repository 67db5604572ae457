"""Motor-state-dependent bottleneck network: build, train, extract, persist."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .nn import (
    Network,
    NetworkSpec,
    Standardizer,
    TrainConfig,
    TrainHistory,
    load_model,
    model_to_bytes,
    one_hot,
    pretrain_stacked_autoencoder,
    sgd_train,
)

log = logging.getLogger(__name__)

N_HIDDEN = 4
DEFAULT_BN_TRAIN = TrainConfig(learning_rate=0.5, batch_size=128, epochs=10)
# the summed-over-dims MSE of the regression head needs a much smaller step
DEFAULT_BN_REGRESSION_TRAIN = TrainConfig(learning_rate=0.02, batch_size=128, epochs=10)


class BNTarget(str, enum.Enum):
    PHN = "phn"
    MS = "ms"
    MFCC = "mfcc"

    @property
    def is_classification(self) -> bool:
        return self is not BNTarget.MFCC


@dataclass(frozen=True)
class BottleneckConfig:
    target: BNTarget = BNTarget.PHN
    bn_dim: int = 40
    bn_position: int = 2
    wide_dim: int = 512
    pretrain: bool | None = None  # None: only for the MFCC target
    preactivation: bool = False

    def __post_init__(self):
        object.__setattr__(self, "target", BNTarget(self.target))
        if not 1 <= self.bn_position <= N_HIDDEN:
            raise ValueError(f"bn_position must lie in [1, {N_HIDDEN}], got {self.bn_position}")
        if self.bn_dim < 1 or self.wide_dim < 1:
            raise ValueError("bn_dim and wide_dim must be positive")
        if self.bn_dim >= self.wide_dim:
            raise ValueError(f"bn_dim ({self.bn_dim}) must be narrower than wide_dim ({self.wide_dim})")

    @property
    def uses_pretraining(self) -> bool:
        return self.target is BNTarget.MFCC if self.pretrain is None else self.pretrain

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target"] = self.target.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BottleneckConfig":
        return cls(**d)


def build_bn_spec(c: BottleneckConfig, input_dim: int, output_dim: int) -> NetworkSpec:
    sizes = [c.wide_dim] * N_HIDDEN
    sizes[c.bn_position - 1] = c.bn_dim
    hidden = "sigmoid" if c.target.is_classification else "tanh"
    if c.target.is_classification:
        head, loss = "softmax", "cross_entropy"
    else:
        head, loss = "linear", "mse"
    return NetworkSpec((input_dim, *sizes, output_dim), (hidden,) * N_HIDDEN + (head,), loss, c.bn_position)


def _check_targets(c: BottleneckConfig, targets, n_frames: int, n_classes: int | None) -> tuple[np.ndarray, int]:
    t = np.asarray(targets)
    if t.shape[0] != n_frames:
        raise ValueError(f"frame-count mismatch: {n_frames} inputs vs {t.shape[0]} targets")
    if c.target is BNTarget.MFCC:
        if t.ndim != 2 or not np.issubdtype(t.dtype, np.floating):
            raise ValueError("MFCC target expects a real (frames x n_ceps) matrix")
        return t.astype(np.float64), t.shape[1]
    if t.ndim != 1 or not (np.issubdtype(t.dtype, np.integer) or t.dtype == bool):
        raise ValueError(f"{c.target.value.upper()} target expects one integer label per frame")
    t = t.astype(np.int64)
    k = 2 if c.target is BNTarget.MS else (n_classes or int(t.max()) + 1)
    if t.min() < 0 or t.max() >= k:
        raise ValueError(f"labels outside [0, {k}) for target {c.target.value}")
    return one_hot(t, k), k


@dataclass(eq=False)
class BottleneckModel:
    network: Network
    config: BottleneckConfig
    input_norm: Standardizer
    target_norm: Standardizer | None = None
    history: TrainHistory | None = field(default=None, repr=False)

    @property
    def input_dim(self) -> int:
        return self.network.spec.input_dim

    def to_bytes(self) -> bytes:
        arrays = {"input_mean": self.input_norm.mean, "input_std": self.input_norm.std}
        if self.target_norm is not None:
            arrays["target_mean"] = self.target_norm.mean
            arrays["target_std"] = self.target_norm.std
        return model_to_bytes(self.network, {"kind": "bottleneck", "config": self.config.to_dict()}, arrays)

    def save(self, path) -> Path:
        """Write the ``EGNN`` model plus a JSON sidecar (``<path>.json``) with the config."""
        path = Path(path)
        path.write_bytes(self.to_bytes())
        sidecar = {"config": self.config.to_dict(), "input_dim": self.input_dim}
        if self.history is not None:
            sidecar["train_loss"] = self.history.train_loss
            sidecar["val_loss"] = self.history.val_loss
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "BottleneckModel":
        net, meta, arrays = load_model(path)
        if meta.get("kind") != "bottleneck":
            raise ValueError(f"{path}: not a bottleneck model (kind={meta.get('kind')!r})")
        target_norm = None
        if "target_mean" in arrays:
            target_norm = Standardizer(arrays["target_mean"], arrays["target_std"])
        return cls(net, BottleneckConfig.from_dict(meta["config"]),
                   Standardizer(arrays["input_mean"], arrays["input_std"]), target_norm)


def train_bottleneck(
    inputs,
    targets,
    config: BottleneckConfig,
    train_config: TrainConfig | None = None,
    validation: tuple | None = None,
    n_classes: int | None = None,
) -> BottleneckModel:
    """Train the bottleneck network on stacked ``MFCC || motor one-hot`` frames.

    ``targets`` are integer frame labels for PHN, motor states (0/1) for MS,
    or the centre-frame MFCC matrix for MFCC. ``validation`` is an
    ``(inputs, targets)`` pair in the same form.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("inputs must be a (frames x dims) matrix")
    if train_config is None:
        train_config = DEFAULT_BN_TRAIN if config.target.is_classification else DEFAULT_BN_REGRESSION_TRAIN
    y, out_dim = _check_targets(config, targets, x.shape[0], n_classes)
    input_norm = Standardizer.fit(x)
    target_norm = Standardizer.fit(y) if config.target is BNTarget.MFCC else None
    xs = input_norm(x)
    ys = target_norm(y) if target_norm is not None else y
    val = None
    if validation is not None:
        vx = np.asarray(validation[0], dtype=np.float64)
        vy, _ = _check_targets(config, validation[1], vx.shape[0], out_dim if config.target is BNTarget.PHN else None)
        val = (input_norm(vx), target_norm(vy) if target_norm is not None else vy)
    spec = build_bn_spec(config, x.shape[1], out_dim)
    if config.uses_pretraining:
        net, history = pretrain_stacked_autoencoder(spec, xs, train_config, targets=ys, validation=val)
    else:
        net, history = sgd_train(spec, xs, ys, train_config, validation=val)
    log.info("bottleneck %s/%d@%d trained: loss %.4f", config.target.value, config.bn_dim, config.bn_position,
             history.train_loss[-1])
    return BottleneckModel(net, config, input_norm, target_norm, history)


def extract_bottleneck(m: BottleneckModel, features, preactivation: bool | None = None) -> np.ndarray:
    """Bottleneck-layer activations for every frame of ``features``."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != m.input_dim:
        raise ValueError(f"feature dims {x.shape[-1] if x.ndim else None} do not match model input {m.input_dim}")
    cache = m.network.forward(m.input_norm(x), upto=m.config.bn_position)
    pre = m.config.preactivation if preactivation is None else preactivation
    return cache.pre_activations[-1] if pre else cache.output
