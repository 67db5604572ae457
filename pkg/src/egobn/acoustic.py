"""Second-stage acoustic model: input assembly, training, posteriors, decoding."""

from __future__ import annotations

import enum
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bottleneck import BNTarget, BottleneckModel, extract_bottleneck
from .frontend import concat_features, one_hot_motor, stack_context
from .nn import Network, NetworkSpec, Standardizer, TrainConfig, TrainHistory, load_model, model_to_bytes, one_hot, sgd_train
from .signal import N_PHONEMES, MotorStateTrack

log = logging.getLogger(__name__)

CONTEXT = 11
DEFAULT_AM_TRAIN = TrainConfig(learning_rate=0.05, batch_size=128, epochs=10)


class Variant(str, enum.Enum):
    MFCC = "mfcc"
    MFCC_MS = "mfcc-ms"
    BN_PHN = "bn-phn"
    BN_MS = "bn-ms"
    BN_MFCC = "bn-mfcc"

    @property
    def bn_target(self) -> BNTarget | None:
        return {"bn-phn": BNTarget.PHN, "bn-ms": BNTarget.MS, "bn-mfcc": BNTarget.MFCC}.get(self.value)

    @property
    def uses_bn(self) -> bool:
        return self.bn_target is not None


@dataclass(frozen=True, eq=False)
class SystemConfig:
    variant: Variant
    bn_model: BottleneckModel | None = None
    context: int = CONTEXT

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.variant.uses_bn and self.bn_model is None:
            raise ValueError(f"variant {self.variant.value} needs a bottleneck model")
        if not self.variant.uses_bn and self.bn_model is not None:
            raise ValueError(f"variant {self.variant.value} takes no bottleneck model")
        if self.variant.uses_bn and self.bn_model.config.target is not self.variant.bn_target:
            raise ValueError(
                f"variant {self.variant.value} needs a {self.variant.bn_target.value} bottleneck, "
                f"got {self.bn_model.config.target.value}"
            )


def motor_input(mfcc, motor, context: int = CONTEXT) -> np.ndarray:
    """Stacked ``MFCC || motor one-hot`` frames, the bottleneck network's input."""
    track = motor if isinstance(motor, MotorStateTrack) else MotorStateTrack(motor)
    return stack_context(concat_features(mfcc, one_hot_motor(track)), context)


def assemble_am_input(
    variant: Variant | str,
    mfcc,
    motor,
    bn_model: BottleneckModel | None = None,
    context: int = CONTEXT,
) -> np.ndarray:
    variant = Variant(variant)
    mfcc = np.asarray(mfcc, dtype=np.float64)
    if variant is Variant.MFCC:
        return stack_context(mfcc, context)
    if variant is Variant.MFCC_MS:
        return motor_input(mfcc, motor, context)
    if bn_model is None:
        raise ValueError(f"variant {variant.value} needs a bottleneck model")
    bn = extract_bottleneck(bn_model, motor_input(mfcc, motor, context))
    return concat_features(stack_context(mfcc, context), bn)


def am_spec(input_dim: int, n_classes: int = N_PHONEMES, n_hidden: int = 5, width: int = 512) -> NetworkSpec:
    return NetworkSpec((input_dim, *([width] * n_hidden), n_classes), ("relu",) * n_hidden + ("softmax",),
                       "cross_entropy")


@dataclass(eq=False)
class AcousticModel:
    network: Network
    input_norm: Standardizer
    variant: Variant = Variant.MFCC
    bn_reference: dict = field(default_factory=dict)  # {"path": ..., "sha256": ...} for BN variants
    history: TrainHistory | None = field(default=None, repr=False)

    @property
    def input_dim(self) -> int:
        return self.network.spec.input_dim

    @property
    def n_classes(self) -> int:
        return self.network.spec.output_dim

    def to_bytes(self) -> bytes:
        meta = {"kind": "acoustic", "variant": Variant(self.variant).value, "bn_reference": self.bn_reference}
        return model_to_bytes(self.network, meta, {"input_mean": self.input_norm.mean, "input_std": self.input_norm.std})

    def save(self, path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path) -> "AcousticModel":
        net, meta, arrays = load_model(path)
        if meta.get("kind") != "acoustic":
            raise ValueError(f"{path}: not an acoustic model (kind={meta.get('kind')!r})")
        return cls(net, Standardizer(arrays["input_mean"], arrays["input_std"]), Variant(meta["variant"]),
                   meta.get("bn_reference") or {})


def _stack(inputs) -> np.ndarray:
    if isinstance(inputs, np.ndarray):
        return inputs.astype(np.float64, copy=False)
    return np.concatenate([np.asarray(x, dtype=np.float64) for x in inputs])


def train_am(
    inputs,
    labels,
    train_config: TrainConfig = DEFAULT_AM_TRAIN,
    n_classes: int = N_PHONEMES,
    n_hidden: int = 5,
    width: int = 512,
    validation: tuple | None = None,
    variant: Variant | str = Variant.MFCC,
) -> AcousticModel:
    """Cross-entropy training of the ReLU acoustic model.

    ``inputs``/``labels`` may be single arrays or per-utterance lists;
    ``validation`` is an ``(inputs, labels)`` pair in the same form.
    """
    x = _stack(inputs)
    y = np.concatenate([np.asarray(l) for l in labels]) if not isinstance(labels, np.ndarray) else labels
    y = np.asarray(y, dtype=np.int64)
    if y.shape[0] != x.shape[0]:
        raise ValueError(f"frame-count mismatch: {x.shape[0]} vs {y.shape[0]}")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"labels outside [0, {n_classes})")
    norm = Standardizer.fit(x)
    val = None
    if validation is not None:
        vx = _stack(validation[0])
        vl = validation[1]
        vy = np.concatenate([np.asarray(l) for l in vl]) if not isinstance(vl, np.ndarray) else vl
        val = (norm(vx), one_hot(np.asarray(vy, dtype=np.int64), n_classes))
    spec = am_spec(x.shape[1], n_classes, n_hidden, width)
    net, history = sgd_train(spec, norm(x), one_hot(y, n_classes), train_config, validation=val)
    if history.val_accuracy:
        log.info("acoustic model %s: validation frame accuracy per epoch %s", Variant(variant).value,
                 " ".join(f"{a:.4f}" for a in history.val_accuracy))
    return AcousticModel(net, norm, Variant(variant), history=history)


def posteriors(m: AcousticModel, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != m.input_dim:
        raise ValueError(f"input has {x.shape[-1] if x.ndim else None} dims, model expects {m.input_dim}")
    return m.network.predict(m.input_norm(x))


def greedy_decode(post, silence: int | None = None) -> list[int]:
    """Frame-wise argmax (lowest index on ties), then collapse repeats.

    ``silence``, if given, is dropped from the output after collapsing.
    """
    p = np.asarray(post)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ValueError("posteriors must be a non-empty (frames x classes) matrix")
    best = np.argmax(p, axis=1)  # numpy returns the first maximum
    keep = np.ones(best.shape[0], dtype=bool)
    keep[1:] = best[1:] != best[:-1]
    out = [int(b) for b in best[keep]]
    if silence is not None:
        out = [s for s in out if s != silence]
    return out


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def decode_feature_set(am: AcousticModel, fs, bn_model: BottleneckModel | None = None, context: int = CONTEXT):
    """Hypotheses and frame predictions for every utterance of a feature set."""
    hyps, frames = {}, {}
    for utt_id, feats, motor in zip(fs.utt_ids, fs.mfcc, fs.motor):
        post = posteriors(am, assemble_am_input(am.variant, feats, motor, bn_model, context))
        hyps[utt_id] = greedy_decode(post)
        frames[utt_id] = np.argmax(post, axis=1)
    return hyps, frames


def am_inputs(variant: Variant | str, fs, bn_model: BottleneckModel | None = None, context: int = CONTEXT) -> list:
    return [assemble_am_input(variant, f, m, bn_model, context) for f, m in zip(fs.mfcc, fs.motor)]


def bn_inputs(fs, context: int = CONTEXT) -> np.ndarray:
    return np.concatenate([motor_input(f, m, context) for f, m in zip(fs.mfcc, fs.motor)])


def bn_targets(target: BNTarget, fs) -> np.ndarray:
    target = BNTarget(target)
    if target is BNTarget.PHN:
        return fs.all_labels()
    if target is BNTarget.MS:
        return np.concatenate(fs.motor).astype(np.int64)
    return np.concatenate(fs.mfcc)

