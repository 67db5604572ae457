"""Dense feed-forward networks written directly on numpy.

Conventions
-----------
* Batches are row-major: an input batch has shape ``(n_examples, in_dim)``.
* Layer ``l`` holds ``W`` of shape ``(out_dim, in_dim)`` and ``b`` of shape
  ``(out_dim,)`` and computes ``h_l = act(h_{l-1} @ W.T + b)``.
* Everything trains in float64.
* The MSE divisor is the number of examples in the batch by default
  (``sum ||x - x~||^2 / n``); ``mse_reduction="element"`` divides by the
  element count instead.
"""

from __future__ import annotations

import copy
import enum
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class Activation(str, enum.Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    SOFTMAX = "softmax"
    LINEAR = "linear"


class Loss(str, enum.Enum):
    MSE = "mse"
    CROSS_ENTROPY = "cross_entropy"


class StaleCacheError(RuntimeError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# elementwise pieces
# ---------------------------------------------------------------------------


def softmax(y: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; accepts a vector or a batch."""
    y = np.asarray(y, dtype=np.float64)
    shifted = y - np.max(y, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def activate(act: Activation, z: np.ndarray) -> np.ndarray:
    if act is Activation.LINEAR:
        return z
    if act is Activation.RELU:
        return np.maximum(z, 0.0)
    if act is Activation.SIGMOID:
        return sigmoid(z)
    if act is Activation.TANH:
        return np.tanh(z)
    if act is Activation.SOFTMAX:
        return softmax(z)
    raise ValueError(act)


def activation_grad(act: Activation, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Elementwise d act / d z, from the pre-activation ``z`` and output ``h``."""
    if act is Activation.LINEAR:
        return np.ones_like(z)
    if act is Activation.RELU:
        return (z > 0).astype(z.dtype)  # derivative at exactly 0 is 0
    if act is Activation.SIGMOID:
        return h * (1.0 - h)
    if act is Activation.TANH:
        return 1.0 - h * h
    raise ValueError(f"{act.value} has no elementwise derivative")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _as_batch(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a[None, :] if a.ndim == 1 else a


def mse_loss(x, x_tilde, reduction: str = "example") -> float:
    """Squared reconstruction error summed over the batch, divided by the example count."""
    x, x_tilde = _as_batch(x), _as_batch(x_tilde)
    if x.shape != x_tilde.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_tilde.shape}")
    total = float(np.sum((x - x_tilde) ** 2))
    if reduction == "example":
        return total / x.shape[0]
    if reduction == "element":
        return total / x.size
    raise ValueError(f"unknown MSE reduction {reduction!r}")


def cross_entropy_loss(probabilities, targets) -> float:
    """Mean ``-log p_target`` over the batch; probabilities are floored at 1e-12."""
    p, t = _as_batch(probabilities), _as_batch(targets)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    return float(-np.sum(t * np.log(np.maximum(p, PROB_FLOOR))) / p.shape[0])


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


# ---------------------------------------------------------------------------
# network structure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: tuple
    activations: tuple
    loss: Loss = Loss.MSE
    bottleneck_index: int | None = None
    mse_reduction: str = "example"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        acts = tuple(Activation(a) for a in self.activations)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activations", acts)
        object.__setattr__(self, "loss", Loss(self.loss))
        if len(sizes) < 3:
            raise ValueError("a network needs input, at least one hidden and an output layer")
        if any(s <= 0 for s in sizes):
            raise ValueError(f"layer sizes must be positive: {sizes}")
        if len(acts) != len(sizes) - 1:
            raise ValueError(f"{len(sizes) - 1} weight layers but {len(acts)} activations")
        if Activation.SOFTMAX in acts[:-1]:
            raise ValueError("softmax is only allowed at the output layer")
        if (acts[-1] is Activation.SOFTMAX) != (self.loss is Loss.CROSS_ENTROPY):
            raise ValueError("softmax output and cross-entropy loss go together")
        if self.bottleneck_index is not None and not 1 <= self.bottleneck_index <= self.num_hidden:
            raise ValueError(f"bottleneck_index must lie in [1, {self.num_hidden}]")
        if self.mse_reduction not in ("example", "element"):
            raise ValueError(f"unknown MSE reduction {self.mse_reduction!r}")

    @property
    def num_hidden(self) -> int:
        return len(self.layer_sizes) - 2

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "activations": [a.value for a in self.activations],
            "loss": self.loss.value,
            "bottleneck_index": self.bottleneck_index,
            "mse_reduction": self.mse_reduction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            tuple(d["layer_sizes"]), tuple(d["activations"]), d["loss"],
            d.get("bottleneck_index"), d.get("mse_reduction", "example"),
        )


@dataclass
class LayerParams:
    weights: np.ndarray
    bias: np.ndarray
    activation: Activation


@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre_activations: list
    activations: list  # h_0 .. h_{L+1}; h_0 is the input
    version: int
    owner: int

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]

    @property
    def hidden(self) -> list:
        return self.activations[1:-1]


class Network:
    """Parameters plus the structure they belong to."""

    def __init__(self, spec: NetworkSpec, layers: list[LayerParams]):
        if len(layers) != len(spec.activations):
            raise ValueError("layer count does not match the network spec")
        for i, (layer, act) in enumerate(zip(layers, spec.activations)):
            expected = (spec.layer_sizes[i + 1], spec.layer_sizes[i])
            if layer.weights.shape != expected or layer.bias.shape != (expected[0],):
                raise ValueError(f"layer {i + 1}: parameter shapes do not match {expected}")
            if layer.activation is not act:
                raise ValueError(f"layer {i + 1}: activation {layer.activation} != spec {act}")
        self.spec = spec
        self.layers = layers
        self.version = 0

    @classmethod
    def init(cls, spec: NetworkSpec, seed: int) -> "Network":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        layers = []
        for n_in, n_out, act in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:], spec.activations):
            limit = math.sqrt(6.0 / (n_in + n_out))
            if act is Activation.SIGMOID:
                limit *= 4.0
            layers.append(LayerParams(rng.uniform(-limit, limit, (n_out, n_in)), np.zeros(n_out), act))
        return cls(spec, layers)

    @classmethod
    def zeros(cls, spec: NetworkSpec) -> "Network":
        return cls(spec, [
            LayerParams(np.zeros((o, i)), np.zeros(o), a)
            for i, o, a in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:], spec.activations)
        ])

    def copy(self) -> "Network":
        return Network(self.spec, copy.deepcopy(self.layers))

    def touch(self) -> None:
        """Mark parameters as modified, invalidating earlier forward caches."""
        self.version += 1

    @property
    def n_parameters(self) -> int:
        return sum(l.weights.size + l.bias.size for l in self.layers)

    def forward(self, x, upto: int | None = None) -> ForwardCache:
        """Run the network, keeping every pre-activation and activation.

        ``upto`` stops after that many weight layers (used for feature extraction).
        """
        h = _as_batch(x)
        if h.shape[1] != self.spec.input_dim:
            raise ValueError(f"input has {h.shape[1]} dims, network expects {self.spec.input_dim}")
        pre, acts = [], [h]
        for layer in self.layers[:upto]:
            z = h @ layer.weights.T + layer.bias
            h = activate(layer.activation, z)
            pre.append(z)
            acts.append(h)
        return ForwardCache(acts[0], pre, acts, self.version, id(self))

    def predict(self, x) -> np.ndarray:
        return self.forward(x).output

    def loss(self, x, targets) -> float:
        return compute_loss(self.spec, self.predict(x), targets)

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.weights.ravel(), l.bias]) for l in self.layers])

    def equals(self, other: "Network") -> bool:
        return self.spec == other.spec and all(
            np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )


def forward(net: Network, x) -> tuple[list, np.ndarray]:
    """Hidden activations ``h_1..h_L`` and the network output for ``x``."""
    cache = net.forward(x)
    return cache.hidden, cache.output


def compute_loss(spec: NetworkSpec, output, targets) -> float:
    if spec.loss is Loss.CROSS_ENTROPY:
        return cross_entropy_loss(output, targets)
    return mse_loss(targets, output, spec.mse_reduction)


def output_gradient(spec: NetworkSpec, output: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Gradient fed to :func:`backward` for this spec's loss.

    For a softmax/cross-entropy head this is the fused ``(p - target) / n``,
    i.e. the gradient with respect to the logits; otherwise it is the
    gradient with respect to the network output.
    """
    output, targets = _as_batch(output), _as_batch(targets)
    if output.shape != targets.shape:
        raise ValueError(f"shape mismatch: {output.shape} vs {targets.shape}")
    n = output.shape[0]
    if spec.loss is Loss.CROSS_ENTROPY:
        return (output - targets) / n
    denom = n if spec.mse_reduction == "example" else output.size
    return 2.0 * (output - targets) / denom


def backward(net: Network, cache: ForwardCache | None, grad_output) -> list[tuple[np.ndarray, np.ndarray]]:
    """Back-propagate ``grad_output`` and return ``(dW, db)`` for every layer."""
    if cache is None:
        raise StaleCacheError("backward called without a forward cache")
    if cache.owner != id(net) or cache.version != net.version:
        raise StaleCacheError("forward cache does not belong to the current parameters")
    if len(cache.pre_activations) != len(net.layers):
        raise StaleCacheError("forward cache is truncated")
    delta = _as_batch(grad_output)
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if layer.activation is not Activation.SOFTMAX:
            delta = delta * activation_grad(layer.activation, cache.pre_activations[i], cache.activations[i + 1])
        grads[i] = (delta.T @ cache.activations[i], delta.sum(axis=0))
        if i:
            delta = delta @ layer.weights
    return grads


def loss_and_gradients(net: Network, x, targets) -> tuple[float, list]:
    cache = net.forward(x)
    loss = compute_loss(net.spec, cache.output, targets)
    return loss, backward(net, cache, output_gradient(net.spec, cache.output, targets))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 128
    epochs: int = 10
    seed: int = 0
    init: str = "glorot_uniform"
    early_stop_patience: int = 0
    validation_fraction: float = 0.1

    def __post_init__(self):
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValueError("learning_rate must be finite and positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.early_stop_patience < 0:
            raise ValueError("early_stop_patience must be >= 0")
        if self.init != "glorot_uniform":
            raise ValueError(f"unknown init scheme {self.init!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    initial_loss: float = float("nan")
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: int | None = None

    @property
    def epoch0_loss(self) -> float:
        return self.initial_loss


def accuracy(net: Network, x, labels) -> float:
    pred = np.argmax(net.predict(x), axis=1)
    return float(np.mean(pred == np.asarray(labels)))


def sgd_step(net: Network, grads, learning_rate: float) -> None:
    for layer, (dw, db) in zip(net.layers, grads):
        layer.weights -= learning_rate * dw
        layer.bias -= learning_rate * db
    net.touch()


def _batched_loss(net: Network, x: np.ndarray, y: np.ndarray, chunk: int = 4096) -> float:
    # losses are means over examples, so chunk results recombine by weight
    total = 0.0
    for s in range(0, x.shape[0], chunk):
        total += compute_loss(net.spec, net.predict(x[s:s + chunk]), y[s:s + chunk]) * min(chunk, x.shape[0] - s)
    return total / x.shape[0]


def sgd_train(
    spec: NetworkSpec,
    data,
    targets,
    config: TrainConfig,
    validation: tuple | None = None,
    init: Network | None = None,
    on_epoch: Callable[[int, TrainHistory], None] | None = None,
) -> tuple[Network, TrainHistory]:
    """Minibatch SGD with a fixed learning rate.

    Shuffling uses a generator seeded from ``(config.seed, epoch)``, so runs
    with the same seed are bitwise reproducible. When
    ``config.early_stop_patience > 0`` the parameters with the lowest
    validation loss are returned; without explicit ``validation`` data the
    trailing ``validation_fraction`` of the examples is held out.
    """
    x = np.asarray(data, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise ValueError("data and targets must be 2-D (examples x dims)")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"{x.shape[0]} examples but {y.shape[0]} targets")
    if y.shape[1] != spec.output_dim:
        raise ValueError(f"targets have {y.shape[1]} dims, network outputs {spec.output_dim}")
    if validation is None and config.early_stop_patience > 0:
        n_val = max(1, int(round(config.validation_fraction * x.shape[0])))
        x, y, validation = x[:-n_val], y[:-n_val], (x[-n_val:], y[-n_val:])
    if config.batch_size > x.shape[0]:
        raise ValueError(f"batch_size {config.batch_size} exceeds dataset size {x.shape[0]}")

    net = init.copy() if init is not None else Network.init(spec, config.seed)
    if net.spec != spec:
        raise ValueError("initial network does not match the network spec")
    history = TrainHistory(initial_loss=_batched_loss(net, x, y))
    best, best_val, stale = None, math.inf, 0
    n = x.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        running = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            loss, grads = loss_and_gradients(net, x[idx], y[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"loss became {loss} during epoch {epoch}")
            running += loss * idx.shape[0]
            sgd_step(net, grads, config.learning_rate)
        history.train_loss.append(running / n)
        if validation is not None:
            vx = np.asarray(validation[0], dtype=np.float64)
            vy = np.asarray(validation[1], dtype=np.float64)
            val = _batched_loss(net, vx, vy)
            if not math.isfinite(val):
                raise TrainingDivergedError(f"validation loss became {val} after epoch {epoch}")
            history.val_loss.append(val)
            if spec.loss is Loss.CROSS_ENTROPY:
                history.val_accuracy.append(accuracy(net, vx, np.argmax(vy, axis=1)))
            if config.early_stop_patience > 0:
                if val < best_val:
                    best, best_val, stale = net.copy(), val, 0
                    history.best_epoch = epoch
                else:
                    stale += 1
        log.debug("epoch %d train %.5f val %s", epoch, history.train_loss[-1],
                  history.val_loss[-1] if history.val_loss else "-")
        if on_epoch is not None:
            on_epoch(epoch, history)
        if config.early_stop_patience > 0 and stale >= config.early_stop_patience:
            break
    if best is not None:
        net = best
    return net, history


def greedy_layerwise_pretrain(spec: NetworkSpec, data, config: TrainConfig) -> Network:
    """Pretrain each hidden layer as a shallow autoencoder ``h_{l-1} -> h_l -> h_{l-1}``.

    Returns the network before fine-tuning: pretrained encoders for the hidden
    layers and a fresh output layer, except when there is a single hidden
    layer and the output reconstructs the input, in which case the
    autoencoder's decoder becomes the output layer.
    """
    x = np.asarray(data, dtype=np.float64)
    net = Network.init(spec, config.seed)
    h = x
    for l in range(1, spec.num_hidden + 1):
        d_prev, d_hidden = spec.layer_sizes[l - 1], spec.layer_sizes[l]
        decoder_act = Activation.LINEAR if l == 1 else spec.activations[l - 2]
        ae_spec = NetworkSpec((d_prev, d_hidden, d_prev), (spec.activations[l - 1], decoder_act), Loss.MSE,
                              mse_reduction=spec.mse_reduction)
        ae_config = TrainConfig(config.learning_rate, min(config.batch_size, h.shape[0]), config.epochs,
                                config.seed + l)
        ae, _ = sgd_train(ae_spec, h, h, ae_config)
        net.layers[l - 1] = copy.deepcopy(ae.layers[0])
        if spec.num_hidden == 1 and spec.output_dim == d_prev and spec.activations[-1] is decoder_act:
            net.layers[-1] = copy.deepcopy(ae.layers[1])
        h = ae.forward(h, upto=1).output
    net.touch()
    return net


def pretrain_stacked_autoencoder(
    spec: NetworkSpec,
    data,
    config: TrainConfig,
    targets=None,
    finetune_config: TrainConfig | None = None,
    validation: tuple | None = None,
) -> tuple[Network, TrainHistory]:
    """Greedy layerwise pretraining followed by end-to-end fine-tuning.

    ``targets`` defaults to ``data`` (plain reconstruction).
    """
    if spec.num_hidden < 1:
        raise ValueError("need at least one hidden layer")
    x = np.asarray(data, dtype=np.float64)
    y = x if targets is None else np.asarray(targets, dtype=np.float64)
    init = greedy_layerwise_pretrain(spec, x, config)
    return sgd_train(spec, x, y, finetune_config or config, validation=validation, init=init)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps vanishing gradients from dominating."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


@dataclass
class GradCheckReport:
    per_layer: list  # dicts: layer, param, max_rel, mean_rel

    @property
    def max_relative_error(self) -> float:
        return max(r["max_rel"] for r in self.per_layer)


def numeric_gradients(net: Network, x, targets, eps: float = 1e-5) -> list[tuple[np.ndarray, np.ndarray]]:
    probe = net.copy()
    out = []
    for layer in probe.layers:
        grads = []
        for arr in (layer.weights, layer.bias):
            g = np.zeros_like(arr)
            flat, gflat = arr.reshape(-1), g.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + eps
                plus = probe.loss(x, targets)
                flat[k] = orig - eps
                minus = probe.loss(x, targets)
                flat[k] = orig
                gflat[k] = (plus - minus) / (2 * eps)
            grads.append(g)
        out.append(tuple(grads))
    return out


def grad_check(net: Network, x, targets, eps: float = 1e-5, floor: float = 1e-8) -> GradCheckReport:
    if net.n_parameters > 10_000:
        raise ValueError(f"{net.n_parameters} parameters is too many for finite differences")
    _, analytic = loss_and_gradients(net, x, targets)
    numeric = numeric_gradients(net, x, targets, eps)
    rows = []
    for i, (a, n) in enumerate(zip(analytic, numeric)):
        for name, ga, gn in (("W", a[0], n[0]), ("b", a[1], n[1])):
            rel = relative_error(ga, gn, floor)
            rows.append({"layer": i + 1, "param": name, "max_rel": float(rel.max()), "mean_rel": float(rel.mean())})
    return GradCheckReport(rows)


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

MODEL_MAGIC = b"EGNN"
MODEL_VERSION = 1


class ModelFormatError(ValueError):
    pass


def model_to_bytes(net: Network, metadata: dict | None = None, arrays: dict | None = None) -> bytes:
    """Serialize: magic, u16 version, u32 header length, JSON header, float64 payload."""
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in (arrays or {}).items()}
    header = {
        "spec": net.spec.to_dict(),
        "metadata": metadata or {},
        "arrays": [[k, list(v.shape)] for k, v in arrays.items()],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MODEL_MAGIC, struct.pack("<HI", MODEL_VERSION, len(head)), head]
    for layer in net.layers:
        parts.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    for v in arrays.values():
        parts.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return b"".join(parts)


def model_from_bytes(blob: bytes) -> tuple[Network, dict, dict]:
    if blob[:4] != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic {blob[:4]!r}, expected {MODEL_MAGIC!r}")
    version, head_len = struct.unpack_from("<HI", blob, 4)
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    offset = 10
    header = json.loads(blob[offset:offset + head_len].decode("utf-8"))
    offset += head_len
    spec = NetworkSpec.from_dict(header["spec"])

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise ModelFormatError("model payload truncated")
        arr = np.frombuffer(blob[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
        return arr

    layers = []
    for n_in, n_out, act in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:], spec.activations):
        w = take((n_out, n_in))
        layers.append(LayerParams(w, take((n_out,)), act))
    arrays = {name: take(tuple(shape)) for name, shape in header["arrays"]}
    if offset != len(blob):
        raise ModelFormatError(f"{len(blob) - offset} trailing bytes after model payload")
    return Network(spec, layers), header["metadata"], arrays


def save_model(path, net: Network, metadata: dict | None = None, arrays: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(net, metadata, arrays))


def load_model(path) -> tuple[Network, dict, dict]:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Per-dimension mean/std normalization fitted on training features."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, min_std: float = 1e-8) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        return cls(x.mean(axis=0), np.maximum(x.std(axis=0), min_std))

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) * self.std + self.mean
