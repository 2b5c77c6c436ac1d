"""Dense ReLU networks with hand-written reverse mode and an Adam optimizer.

Layer ``i`` computes ``z = x @ W_i + b_i`` with ``W_i`` of shape
``(fan_in, fan_out)``. Hidden layers use ReLU; the output layer uses either
``tanh`` (actors) or the identity (critics, Q-networks).

Flattening order is layer-major, weights before bias, each array row-major,
so a ``[3, 5, 2]`` network flattens to ``W0 (15), b0 (5), W1 (10), b1 (2)``.

Binary layout (all little-endian)::

    magic      4 bytes   b"THZM"
    version    u32       1
    n_sizes    u32
    sizes      u32 * n_sizes
    out_act    u8        0 = identity, 1 = tanh
    n_params   u64
    params     f64 * n_params   (flattening order)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError

ACTIVATIONS = ("identity", "tanh")
MAGIC = b"THZM"
_VERSION = 1


class Mlp:
    def __init__(self, layer_sizes, output_activation="identity", rng=None):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2:
            raise ConfigError(f"an MLP needs input and output sizes, got {sizes}")
        if any(s < 1 for s in sizes):
            raise ConfigError(f"every layer width must be >= 1, got {sizes}")
        if output_activation not in ACTIVATIONS:
            raise ConfigError(f"unknown output activation {output_activation!r}")
        self.layer_sizes = sizes
        self.output_activation = output_activation
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            if rng is None:
                self.weights.append(np.zeros((fan_in, fan_out)))
                self.biases.append(np.zeros(fan_out))
            else:
                bound = 1.0 / np.sqrt(fan_in)
                self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
                self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def params(self):
        """Parameter arrays in flattening order."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    def same_architecture(self, other: "Mlp") -> bool:
        return (self.layer_sizes == other.layer_sizes
                and self.output_activation == other.output_activation)

    def copy(self) -> "Mlp":
        new = Mlp(self.layer_sizes, self.output_activation)
        new.weights = [W.copy() for W in self.weights]
        new.biases = [b.copy() for b in self.biases]
        return new

    def __eq__(self, other):
        if not isinstance(other, Mlp):
            return NotImplemented
        return self.same_architecture(other) and all(
            np.array_equal(a, b) for a, b in zip(self.params, other.params))

    __hash__ = None

    def __repr__(self):
        return f"Mlp({self.layer_sizes}, output_activation={self.output_activation!r})"

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_size or x.ndim not in (1, 2):
            raise DimensionError(f"expected input width {self.input_size}, got shape {x.shape}")
        return x

    def _forward_cache(self, x):
        acts = [x]
        pre = []
        a = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            pre.append(z)
            if i < last:
                a = np.maximum(z, 0.0)
            elif self.output_activation == "tanh":
                a = np.tanh(z)
            else:
                a = z
            acts.append(a)
        return acts, pre

    def forward(self, x):
        """Evaluate on one input vector or a batch of row vectors."""
        x = self._check_input(x)
        return self._forward_cache(x)[0][-1]

    __call__ = forward

    def backward(self, x, upstream) -> "Gradients":
        """Gradients of ``sum(forward(x) * upstream)`` w.r.t. all parameters and ``x``.

        For a batch, parameter gradients are summed over rows and the input
        gradient keeps one row per sample.
        """
        x = self._check_input(x)
        acts, pre = self._forward_cache(x)
        delta = np.asarray(upstream, dtype=float)
        if delta.shape != acts[-1].shape:
            raise DimensionError(f"upstream shape {delta.shape} != output shape {acts[-1].shape}")
        if self.output_activation == "tanh":
            delta = delta * (1.0 - acts[-1] ** 2)
        n = len(self.weights)
        dW = [None] * n
        db = [None] * n
        for i in range(n - 1, -1, -1):
            a_in = acts[i]
            if a_in.ndim == 1:
                dW[i] = np.outer(a_in, delta)
                db[i] = delta.copy()
            else:
                dW[i] = a_in.T @ delta
                db[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
            if i > 0:
                delta = delta * (pre[i - 1] > 0)
        return Gradients(dW, db, delta)


@dataclass
class Gradients:
    weights: list
    biases: list
    input: np.ndarray

    @property
    def params(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def scaled(self, factor: float) -> "Gradients":
        return Gradients([g * factor for g in self.weights], [g * factor for g in self.biases],
                         self.input * factor)


@dataclass
class OptimizerState:
    """Adam moments for one network."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_net(cls, net: Mlp, lr: float = 1e-3, **kw) -> "OptimizerState":
        return cls(lr=lr, m=[np.zeros_like(p) for p in net.params],
                   v=[np.zeros_like(p) for p in net.params], **kw)


def optimizer_step(state: OptimizerState, net: Mlp, grads: Gradients) -> Mlp:
    """One in-place Adam descent step along ``grads``; returns ``net``."""
    params = net.params
    gparams = grads.params
    if len(params) != len(gparams) or any(p.shape != g.shape for p, g in zip(params, gparams)):
        raise DimensionError("gradient shapes do not match the network")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    corr1 = 1.0 - state.beta1 ** t
    corr2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, gparams, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return net


def flatten(net: Mlp) -> np.ndarray:
    return np.concatenate([p.ravel() for p in net.params])


def unflatten(vector, template: Mlp) -> Mlp:
    vec = np.asarray(vector, dtype=float)
    if vec.ndim != 1 or vec.size != template.num_params:
        raise DimensionError(f"expected {template.num_params} parameters, got {vec.size}")
    net = Mlp(template.layer_sizes, template.output_activation)
    pos = 0
    for p in net.params:
        p[...] = vec[pos:pos + p.size].reshape(p.shape)
        pos += p.size
    return net


def load_flat(net: Mlp, vector) -> None:
    """Overwrite ``net``'s parameters in place from a flat vector."""
    src = unflatten(vector, net)
    for dst, s in zip(net.params, src.params):
        dst[...] = s


def soft_update(target: Mlp, main: Mlp, tau: float) -> Mlp:
    """In place ``target <- tau * main + (1 - tau) * target``; returns ``target``."""
    if not target.same_architecture(main):
        raise DimensionError(f"architecture mismatch: {target} vs {main}")
    for t, m in zip(target.params, main.params):
        t *= 1.0 - tau
        t += tau * m
    return target


def to_bytes(net: Mlp) -> bytes:
    sizes = net.layer_sizes
    header = MAGIC + struct.pack(f"<II{len(sizes)}IB", _VERSION, len(sizes), *sizes,
                                 ACTIVATIONS.index(net.output_activation))
    flat = flatten(net)
    return header + struct.pack("<Q", flat.size) + flat.astype("<f8").tobytes()


def from_bytes(blob: bytes, offset: int = 0) -> tuple[Mlp, int]:
    """Decode one network starting at ``offset``; returns it and the end offset."""
    if blob[offset:offset + 4] != MAGIC:
        raise ConfigError("not a serialized network (bad magic)")
    pos = offset + 4
    version, n_sizes = struct.unpack_from("<II", blob, pos)
    if version != _VERSION:
        raise ConfigError(f"unsupported network format version {version}")
    pos += 8
    sizes = struct.unpack_from(f"<{n_sizes}I", blob, pos)
    pos += 4 * n_sizes
    (act,) = struct.unpack_from("<B", blob, pos)
    pos += 1
    (count,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    template = Mlp(sizes, ACTIVATIONS[act])
    if count != template.num_params:
        raise DimensionError(f"header says {count} parameters, architecture needs {template.num_params}")
    flat = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(float)
    return unflatten(flat, template), pos + 8 * count
