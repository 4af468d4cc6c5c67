"""Small dense network with hand-written gradients.

Everything is float64. Batches are 2-D arrays of shape ``(n, in_dim)``; a
single 1-D vector is accepted anywhere a batch is and treated as ``n = 1``.
"""

from __future__ import annotations

import copy
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

ACTIVATIONS = ("identity", "relu")

# He-style uniform bound for hidden layers: sqrt(6 / fan_in)
HE_UNIFORM_GAIN = 6.0

CHECKPOINT_MAGIC = b"CATN"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class Network:
    layers: list[Layer]
    # number of optimizer steps applied; lets callers prove ordering of snapshots
    updates: int = 0
    frozen: bool = field(default=False, repr=False)

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("network needs at least one layer")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer {i} outputs {a.out_dim} but layer {i + 1} expects {b.in_dim}")
        for layer in self.layers:
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.out_dim,):
                raise ShapeError(f"bias shape {layer.bias.shape} does not match {layer.out_dim} outputs")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_classes(self) -> int:
        return self.layers[-1].out_dim

    @property
    def feature_dim(self) -> int:
        if len(self.layers) < 2:
            return self.in_dim
        return self.layers[-2].out_dim

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def param_names(self) -> list[str]:
        out = []
        for i in range(len(self.layers)):
            out += [f"layers[{i}].weight", f"layers[{i}].bias"]
        return out

    def snapshot(self) -> "Network":
        """Frozen deep copy; its arrays are read-only."""
        snap = copy.deepcopy(self)
        for p in snap.params():
            p.setflags(write=False)
        snap.frozen = True
        return snap

    def copy(self) -> "Network":
        net = copy.deepcopy(self)
        for p in net.params():
            p.setflags(write=True)
        net.frozen = False
        return net


def init_network(sizes: Sequence[int], rng: np.random.Generator) -> Network:
    """Build ``sizes[0] -> sizes[1] -> ... -> sizes[-1]``.

    Hidden layers are relu with He-uniform weights; the output layer is
    identity with the same small init used for grown outputs.
    """
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        last = i == len(sizes) - 2
        bound = 1.0 / np.sqrt(fan_in) if last else np.sqrt(HE_UNIFORM_GAIN / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(Layer(w, np.zeros(fan_out), "identity" if last else "relu"))
    return Network(layers)


def _as_batch(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        got = x.shape[-1] if x.ndim else 0
        raise ShapeError(f"input has {got} features, network expects {net.in_dim}")
    return x


def _act(name: str, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if name == "relu" else z


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _activations(net: Network, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    for layer in net.layers:
        acts.append(_act(layer.activation, acts[-1] @ layer.weight.T + layer.bias))
    return acts


@dataclass
class ForwardResult:
    logits: np.ndarray
    softmax: np.ndarray
    feature: np.ndarray


def forward(net: Network, x) -> ForwardResult:
    """Logits, softmax and raw (un-normalized) penultimate activation.

    Output arrays keep the batch axis iff ``x`` had one.
    """
    single = np.ndim(x) == 1
    acts = _activations(net, _as_batch(net, x))
    logits = acts[-1]
    res = ForwardResult(logits, softmax(logits), acts[-2])
    if single:
        res = ForwardResult(res.logits[0], res.softmax[0], res.feature[0])
    return res


def backward(net: Network, x, grad_on_logits) -> list[np.ndarray]:
    """Parameter gradients for upstream gradient ``grad_on_logits``.

    Gradients are summed over the batch and returned in ``net.params()``
    order (weight, bias per layer).
    """
    xb = _as_batch(net, x)
    g = np.asarray(grad_on_logits, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != (xb.shape[0], net.output_classes):
        raise ShapeError(f"logit gradient shape {g.shape} does not match ({xb.shape[0]}, {net.output_classes})")
    acts = _activations(net, xb)
    grads: list[np.ndarray] = [None] * (2 * len(net.layers))  # type: ignore[list-item]
    delta = g
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if layer.activation == "relu":
            delta = delta * (acts[i + 1] > 0)
        grads[2 * i] = delta.T @ acts[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i:
            delta = delta @ layer.weight
    return grads


@dataclass
class FeatureBatch:
    features: np.ndarray
    zero_norm: np.ndarray  # bool per row


def extract_features(net: Network, x) -> FeatureBatch:
    """L2-normalized penultimate features.

    Rows whose activation is exactly zero come back as zero vectors with
    ``zero_norm`` set instead of dividing by zero.
    """
    feat = _activations(net, _as_batch(net, x))[-2]
    norms = np.linalg.norm(feat, axis=1)
    zero = norms == 0.0
    if zero.any():
        log.warning("%d sample(s) produced a zero-norm feature", int(zero.sum()))
    safe = np.where(zero, 1.0, norms)
    return FeatureBatch(feat / safe[:, None], zero)


def extract_feature(net: Network, x) -> np.ndarray:
    return extract_features(net, x).features[0]


def expand_output(net: Network, m_new: int, rng: np.random.Generator) -> Network:
    """New network with ``m_new`` extra output units appended.

    Existing rows are copied unchanged, so old logits are reproduced exactly.
    """
    if m_new < 0:
        raise ValueError("m_new must be >= 0")
    out = net.copy()
    if m_new == 0:
        return out
    last = out.layers[-1]
    bound = 1.0 / np.sqrt(last.in_dim)
    new_w = rng.uniform(-bound, bound, size=(m_new, last.in_dim))
    out.layers[-1] = Layer(np.vstack([last.weight, new_w]), np.concatenate([last.bias, np.zeros(m_new)]), last.activation)
    return out


class SGD:
    """SGD with momentum; weight decay is added to the gradient first.

    v <- momentum * v + (grad + weight_decay * w)
    w <- w - lr * v
    """

    def __init__(self, net: Network, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if weight_decay < 0:
            raise ValueError("weight decay must be non-negative")
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p) for p in net.params()]

    def resize(self, net: Network) -> None:
        """Grow velocity buffers after :func:`expand_output` (new rows start at 0)."""
        new = []
        for v, p in zip(self.velocity, net.params()):
            if v.shape == p.shape:
                new.append(v)
                continue
            grown = np.zeros_like(p)
            grown[tuple(slice(0, s) for s in v.shape)] = v
            new.append(grown)
        self.velocity = new

    def step(self, net: Network, grads: Sequence[np.ndarray]) -> Network:
        if net.frozen:
            raise RuntimeError("cannot update a frozen snapshot")
        params = net.params()
        if len(grads) != len(params):
            raise ShapeError(f"got {len(grads)} gradients for {len(params)} parameters")
        names = net.param_names()
        for name, p, g in zip(names, params, grads):
            if g.shape != p.shape:
                raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient in {name}")
        for p, g, v in zip(params, grads, self.velocity):
            v *= self.momentum
            v += g + self.weight_decay * p
            p -= self.lr * v
        net.updates += 1
        return net


# -- checkpoints -----------------------------------------------------------

_ACT_TAG = {"identity": 0, "relu": 1}
_TAG_ACT = {v: k for k, v in _ACT_TAG.items()}


def dumps_network(net: Network) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(net.layers))]
    for layer in net.layers:
        rows, cols = layer.weight.shape
        parts.append(struct.pack("<BII", _ACT_TAG[layer.activation], rows, cols))
        parts.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return b"".join(parts)


def loads_network(buf: bytes) -> Network:
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"bad checkpoint magic {buf[:4]!r}")
    if len(buf) < 12:
        raise ValueError(f"truncated checkpoint: expected at least 12 bytes, found {len(buf)}")
    version, n_layers = struct.unpack_from("<II", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 12
    layers = []
    for i in range(n_layers):
        if off + 9 > len(buf):
            raise ValueError(f"truncated checkpoint in layer {i} header: expected {off + 9} bytes, found {len(buf)}")
        tag, rows, cols = struct.unpack_from("<BII", buf, off)
        off += 9
        need = off + 8 * (rows * cols + rows)
        if need > len(buf):
            raise ValueError(f"truncated checkpoint in layer {i}: expected {need} bytes, found {len(buf)}")
        w = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols).astype(np.float64)
        off += 8 * rows * cols
        b = np.frombuffer(buf, dtype="<f8", count=rows, offset=off).astype(np.float64)
        off += 8 * rows
        if tag not in _TAG_ACT:
            raise ValueError(f"unknown activation tag {tag} in layer {i}")
        layers.append(Layer(w, b, _TAG_ACT[tag]))
    if off != len(buf):
        raise ValueError(f"checkpoint has {len(buf) - off} trailing bytes")
    return Network(layers)


def save_network(net: Network, path) -> None:
    Path(path).write_bytes(dumps_network(net))


def load_network(path) -> Network:
    return loads_network(Path(path).read_bytes())
