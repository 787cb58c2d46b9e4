"""Small fully-connected classifier trained with mini-batch SGD.

Parameters live in an immutable :class:`DenseNet`; training returns a new
value and never mutates its input.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, order="C")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DenseNet:
    """ReLU hidden layers, identity output. Weights are stored ``out x in``."""

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self):
        layers = tuple((_frozen(w), _frozen(b)) for w, b in self.layers)
        if not layers:
            raise ValueError("a DenseNet needs at least one layer")
        for k, (w, b) in enumerate(layers):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {k}: weight {w.shape} / bias {b.shape}")
            if k and w.shape[1] != layers[k - 1][0].shape[0]:
                raise ValueError(f"layer {k} input does not match layer {k - 1} output")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {k} has non-finite parameters")
        object.__setattr__(self, "layers", layers)

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.layers[0][0].shape[1],) + tuple(w.shape[0] for w, _ in self.layers)

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.layers])

    @classmethod
    def from_flat(cls, layer_dims, vector) -> "DenseNet":
        vector = np.asarray(vector, dtype=np.float64)
        layers, pos = [], 0
        for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
            w = vector[pos:pos + d_in * d_out].reshape(d_out, d_in)
            pos += d_in * d_out
            b = vector[pos:pos + d_out]
            pos += d_out
            layers.append((w, b))
        if pos != vector.size:
            raise ValueError(f"expected {pos} parameters, got {vector.size}")
        return cls(tuple(layers))

    def identical(self, other: "DenseNet") -> bool:
        """Bitwise parameter equality."""
        return self.layer_dims == other.layer_dims and all(
            np.array_equal(w1, w2) and np.array_equal(b1, b2)
            for (w1, b1), (w2, b2) in zip(self.layers, other.layers))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 32
    local_epochs: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be at least 1")


def init_params(layer_dims, seed: int) -> DenseNet:
    """He-normal weights (variance ``2 / fan_in``) and zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError(f"invalid layer_dims {layer_dims!r}")
    rng = np.random.default_rng(seed)
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        w = rng.standard_normal((d_out, d_in)) * np.sqrt(2.0 / d_in)
        layers.append((w, np.zeros(d_out)))
    return DenseNet(tuple(layers))


def zeros_like_dims(layer_dims) -> DenseNet:
    dims = list(layer_dims)
    return DenseNet(tuple((np.zeros((o, i)), np.zeros(o))
                          for i, o in zip(dims[:-1], dims[1:])))


def _check_batch(net: DenseNet, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.layer_dims[0]:
        raise ValueError(
            f"batch has shape {x.shape}, net expects width {net.layer_dims[0]}")
    return x


def _forward_cache(net: DenseNet, x: np.ndarray):
    acts = [x]
    h = x
    last = len(net.layers) - 1
    for k, (w, b) in enumerate(net.layers):
        z = h @ w.T + b
        h = z if k == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts


def forward(net: DenseNet, batch) -> np.ndarray:
    """Logits for a batch of shape ``(n, in_dim)``."""
    return _forward_cache(net, _check_batch(net, batch))[-1]


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def loss_and_grad(net: DenseNet, batch, labels):
    """Mean softmax cross-entropy and its exact gradient.

    Returns ``(loss, grads)`` where ``grads`` is a list of ``(dW, db)`` pairs
    aligned with ``net.layers``.
    """
    x = _check_batch(net, batch)
    y = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if y.shape != (n,):
        raise ValueError(f"{n} samples but labels of shape {y.shape}")
    if y.min() < 0 or y.max() >= net.num_classes:
        raise ValueError("label out of range")
    acts = _forward_cache(net, x)
    logp = _log_softmax(acts[-1])
    rows = np.arange(n)
    loss = -logp[rows, y].mean()

    delta = np.exp(logp)
    delta[rows, y] -= 1.0
    delta /= n
    grads = []
    for k in range(len(net.layers) - 1, -1, -1):
        w, _ = net.layers[k]
        h_in = acts[k]
        grads.append((delta.T @ h_in, delta.sum(axis=0)))
        if k:
            delta = (delta @ w) * (h_in > 0.0)
    grads.reverse()
    return float(loss), grads


def train_local(net: DenseNet, features, labels, cfg: TrainConfig) -> DenseNet:
    """Plain mini-batch SGD; batch order reshuffled every epoch from ``cfg.seed``."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    if n == 0:
        raise ValueError("no training data")
    rng = np.random.default_rng(cfg.seed)
    params = [(w.copy(), b.copy()) for w, b in net.layers]
    work = DenseNet.__new__(DenseNet)
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            # bypass validation on the hot path; params are finite-checked on return
            object.__setattr__(work, "layers", tuple(params))
            _, grads = loss_and_grad(work, x[idx], y[idx])
            for (w, b), (dw, db) in zip(params, grads):
                w -= cfg.learning_rate * dw
                b -= cfg.learning_rate * db
    return DenseNet(tuple(params))


def predict_confidence(net: DenseNet, samples) -> np.ndarray:
    """Softmax confidences; a 1-D sample gives a 1-D vector."""
    x = np.asarray(samples, dtype=np.float64)
    probs = softmax(forward(net, x))
    return probs[0] if x.ndim == 1 else probs


def predict(net: DenseNet, samples) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return np.argmax(softmax(forward(net, samples)), axis=-1)


def accuracy(net: DenseNet, features, labels) -> float:
    y = np.asarray(labels)
    if y.size == 0:
        raise ValueError("no samples")
    return float(np.mean(predict(net, features) == y))


def mean_loss(net: DenseNet, features, labels) -> float:
    x = _check_batch(net, features)
    y = np.asarray(labels, dtype=np.int64)
    logp = _log_softmax(forward(net, x))
    return float(-logp[np.arange(len(y)), y].mean())


# --- checkpoints -------------------------------------------------------------
#
# Binary layout (little-endian):
#   b"FMCK" | uint32 version=1 | uint32 n_dims | uint32 dims[n_dims]
#   then per layer: float64 W (row-major, out x in), float64 b
# Text layout: "fedmia-ckpt 1", "dims d0 d1 ...", then one float per line
# in the same order, written with repr() so values round-trip exactly.

_CKPT_MAGIC = b"FMCK"


def save_checkpoint(net: DenseNet, path, text: bool = False) -> None:
    dims = net.layer_dims
    if text:
        lines = ["fedmia-ckpt 1", "dims " + " ".join(map(str, dims))]
        lines += [repr(float(v)) for v in net.flat()]
        Path(path).write_text("\n".join(lines) + "\n")
        return
    head = _CKPT_MAGIC + struct.pack(f"<II{len(dims)}I", 1, len(dims), *dims)
    Path(path).write_bytes(head + net.flat().astype("<f8").tobytes())


def load_checkpoint(path) -> DenseNet:
    raw = Path(path).read_bytes()
    if raw[:4] == _CKPT_MAGIC:
        version, n_dims = struct.unpack("<II", raw[4:12])
        if version != 1:
            raise ValueError(f"unsupported checkpoint version {version}")
        dims = struct.unpack(f"<{n_dims}I", raw[12:12 + 4 * n_dims])
        values = np.frombuffer(raw, dtype="<f8", offset=12 + 4 * n_dims)
        return DenseNet.from_flat(dims, values.astype(np.float64))
    lines = raw.decode("utf-8").splitlines()
    if len(lines) < 2 or lines[0] != "fedmia-ckpt 1" or not lines[1].startswith("dims "):
        raise ValueError(f"{path}: not a fedmia checkpoint")
    dims = [int(t) for t in lines[1].split()[1:]]
    values = [float(t) for t in lines[2:] if t.strip()]
    return DenseNet.from_flat(dims, values)
