"""Dense networks with hand-written backpropagation, plus SGD/Adam.

Checkpoint format (text, version 1)::

    safeq-checkpoint 1
    {"kind": ..., ...}                      <- one line of JSON metadata
    tensor <name> <ndim> <dim0> [<dim1> ...]
    <all entries, row-major, space separated, %.17g>
    tensor ...

Every float is written with 17 significant digits, so a save/load round trip
is exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import ValidationError

CHECKPOINT_MAGIC = "safeq-checkpoint"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = ("tanh", "relu", "identity")


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name, z, out):
    if name == "tanh":
        return 1.0 - out * out
    if name == "relu":
        return (z > 0).astype(z.dtype)
    return np.ones_like(z)


class DenseNet:
    """Fully connected network acting on row batches of shape (n, in_dim)."""

    def __init__(self, sizes, activations=None, rng=None, hidden_activation="tanh"):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValidationError(f"bad layer sizes {sizes}")
        if activations is None:
            activations = [hidden_activation] * (len(sizes) - 2) + ["identity"]
        if len(activations) != len(sizes) - 1 or any(a not in _ACTIVATIONS for a in activations):
            raise ValidationError(f"bad activations {activations}")
        self.sizes = sizes
        self.activations = list(activations)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))
        self._cache = None

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    @property
    def params(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValidationError(f"expected input of width {self.in_dim}, got shape {x.shape}")
        return x

    def forward(self, x, cache=True):
        h = self._check_input(x)
        pre, post = [], [h]
        for W, b, act in zip(self.weights, self.biases, self.activations):
            z = h @ W + b
            h = _act(act, z)
            pre.append(z)
            post.append(h)
        self._cache = (pre, post) if cache else None
        return h

    def predict(self, x):
        """Forward pass without touching the backward cache."""
        h = self._check_input(x)
        for W, b, act in zip(self.weights, self.biases, self.activations):
            h = _act(act, h @ W + b)
        return h

    __call__ = predict

    def backward(self, grad_out):
        """Gradients of sum(grad_out * output) for the last cached forward.

        Returns ``(param_grads, grad_input)`` with ``param_grads`` ordered like
        :attr:`params`. The cache is consumed.
        """
        if self._cache is None:
            raise RuntimeError("backward() needs a fresh forward(..., cache=True)")
        pre, post = self._cache
        self._cache = None
        g = np.asarray(grad_out, dtype=float)
        if g.shape != post[-1].shape:
            raise ValidationError(f"output gradient shape {g.shape} != {post[-1].shape}")
        grads = [None] * (2 * len(self.weights))
        for i in reversed(range(len(self.weights))):
            g = g * _act_grad(self.activations[i], pre[i], post[i + 1])
            grads[2 * i] = post[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, g

    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=float)
        i = 0
        for p in self.params:
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size
        if i != flat.size:
            raise ValidationError("flat parameter vector has the wrong length")

    def copy(self):
        other = DenseNet.__new__(DenseNet)
        other.sizes = list(self.sizes)
        other.activations = list(self.activations)
        other.weights = [W.copy() for W in self.weights]
        other.biases = [b.copy() for b in self.biases]
        other._cache = None
        return other

    def load_from(self, other):
        for p, q in zip(self.params, other.params):
            p[...] = q

    def spec(self):
        return {"sizes": self.sizes, "activations": self.activations}

    def tensors(self, prefix):
        return {f"{prefix}.{i}": p for i, p in enumerate(self.params)}

    @classmethod
    def from_tensors(cls, spec, tensors, prefix):
        net = cls(spec["sizes"], spec["activations"])
        for i, p in enumerate(net.params):
            t = tensors[f"{prefix}.{i}"]
            if t.shape != p.shape:
                raise ValidationError(f"tensor {prefix}.{i} has shape {t.shape}, expected {p.shape}")
            p[...] = t
        return net


def _check_finite(grads):
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient encountered; aborting optimizer step")


class SGD:
    def __init__(self, lr=1e-2):
        self.lr = lr

    def step(self, params, grads):
        _check_finite(grads)
        for p, g in zip(params, grads):
            if p.shape != g.shape:
                raise ValidationError("parameter/gradient shape mismatch")
            p -= self.lr * g


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        _check_finite(grads)
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = np.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ValidationError("parameter/gradient shape mismatch")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * corr * m / (np.sqrt(v) + self.eps)


def make_optimizer(name, lr):
    if name == "adam":
        return Adam(lr)
    if name == "sgd":
        return SGD(lr)
    raise ValidationError(f"unknown optimizer {name!r}")


def save_checkpoint(path, meta, tensors):
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}", json.dumps(meta, sort_keys=True)]
    for name, t in tensors.items():
        t = np.asarray(t, dtype=float)
        lines.append(f"tensor {name} {t.ndim} " + " ".join(str(d) for d in t.shape))
        lines.append(" ".join("%.17g" % v for v in t.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path):
    lines = Path(path).read_text().splitlines()
    head = lines[0].split()
    if len(head) != 2 or head[0] != CHECKPOINT_MAGIC:
        raise ValidationError(f"{path} is not a safeq checkpoint")
    if int(head[1]) != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {head[1]}")
    meta = json.loads(lines[1])
    tensors = {}
    i = 2
    while i < len(lines):
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        if parts[0] != "tensor":
            raise ValidationError(f"malformed checkpoint line {i + 1}")
        name, ndim = parts[1], int(parts[2])
        shape = tuple(int(d) for d in parts[3:3 + ndim])
        body = lines[i + 1].split() if i + 1 < len(lines) else []
        values = np.array([float(v) for v in body], dtype=float)
        tensors[name] = values.reshape(shape)
        i += 2
    return meta, tensors
