"""Projection MLPs into the unified space, their gradients, and AdamW.

Layers act on row-major batches: ``h = x @ W.T + b`` with ``W`` of shape
``(out_dim, in_dim)``.  Hidden layers use ReLU; the output layer is affine.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ._io import atomic_write_bytes
from .errors import DataError


class ProjectionNet:
    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        ws = [np.array(w, dtype=np.float64) for w in weights]
        bs = [np.array(b, dtype=np.float64) for b in biases]
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != ws[i - 1].shape[0]:
                raise ValueError(f"layer {i} input {w.shape[1]} != previous output {ws[i - 1].shape[0]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite parameters")
        self.weights = ws
        self.biases = bs

    @property
    def in_dim(self):
        return self.weights[0].shape[1]

    @property
    def out_dim(self):
        return self.weights[-1].shape[0]

    @property
    def hidden_dims(self):
        return [w.shape[0] for w in self.weights[:-1]]

    @property
    def num_layers(self):
        return len(self.weights)

    def parameters(self):
        """Flat list ``[W0, b0, W1, b1, ...]`` of the live parameter arrays."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self):
        return ProjectionNet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def _as_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected input of width {self.in_dim}, got shape {x.shape}")
        return x, single

    def forward(self, x):
        out, _ = self.forward_cached(x)
        return out

    def __call__(self, x):
        return self.forward(x)

    def forward_cached(self, x):
        """Forward pass that also returns the activations backward() needs."""
        h, single = self._as_batch(x)
        inputs, pre = [], []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ w.T + b
            pre.append(z)
            h = np.maximum(z, 0.0) if i < last else z
        cache = (inputs, pre, single)
        return (h[0] if single else h), cache

    def backward(self, cache, grad_out):
        """Gradients of a scalar loss given dLoss/dOutput.

        Returns ``(param_grads, grad_input)`` where ``param_grads`` is ordered
        like :meth:`parameters`.  Batch rows contribute additively.
        """
        inputs, pre, single = cache
        g = np.asarray(grad_out, dtype=np.float64)
        if single:
            g = g[None, :]
        if g.shape != pre[-1].shape:
            raise ValueError(f"output gradient shape {g.shape} != output shape {pre[-1].shape}")
        grads = [None] * (2 * len(self.weights))
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            if i < last:
                g = g * (pre[i] > 0.0)
            grads[2 * i] = g.T @ inputs[i]
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i]
        return grads, (g[0] if single else g)


def init_net(in_dim, hidden_dims, out_dim, rng) -> ProjectionNet:
    """Glorot-uniform weights, zero biases."""
    dims = [in_dim, *hidden_dims, out_dim]
    if any(int(d) < 1 for d in dims):
        raise ValueError(f"all layer dimensions must be >= 1, got {dims}")
    rng = np.random.default_rng(rng)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ProjectionNet(weights, biases)


def l2_normalize(x, eps=1e-12):
    """Row-wise unit normalisation; returns (y, norms) for the backward pass."""
    norms = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    return x / np.maximum(norms, eps), norms


def l2_normalize_backward(y, norms, grad_y, eps=1e-12):
    n = np.maximum(norms, eps)
    return (grad_y - y * np.sum(grad_y * y, axis=-1, keepdims=True)) / n


class AdamW:
    """Adam with bias correction and decoupled weight decay.

    The decay shrinks parameters by ``lr * weight_decay`` before the moment
    update is applied, matching the usual AdamW formulation.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        if lr <= 0 or eps <= 0 or weight_decay < 0:
            raise ValueError("lr and eps must be positive, weight_decay non-negative")
        if not all(0.0 <= b < 1.0 for b in betas):
            raise ValueError("betas must lie in [0, 1)")
        self.lr = float(lr)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        """Update ``params`` in place."""
        if len(params) != len(self.m) or len(grads) != len(params):
            raise ValueError("parameter / gradient count does not match optimizer state")
        for p, g, m in zip(params, grads, self.m):
            if p.shape != m.shape or np.shape(g) != p.shape:
                raise ValueError(f"shape mismatch: param {p.shape}, grad {np.shape(g)}, state {m.shape}")
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- checkpoint ---------------------------------------------------------------

_MAGIC = b"RXEMBCK\x00"
_VERSION = 1


@dataclass
class Checkpoint:
    """Both projection nets plus the output-normalisation flag."""

    p2u: ProjectionNet
    m2u: ProjectionNet
    normalize: bool = False

    def __post_init__(self):
        if self.p2u.out_dim != self.m2u.out_dim:
            raise ValueError("P2U and M2U must share the unified dimension")

    @property
    def unified_dim(self):
        return self.p2u.out_dim

    def to_bytes(self) -> bytes:
        parts = [_MAGIC, struct.pack("<II", _VERSION, int(bool(self.normalize)))]
        for net in (self.p2u, self.m2u):
            hidden = net.hidden_dims
            parts.append(struct.pack(f"<II{len(hidden)}I", net.in_dim, len(hidden), *hidden))
            parts.append(struct.pack("<I", net.out_dim))
        for net in (self.p2u, self.m2u):
            for p in net.parameters():
                parts.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if data[:8] != _MAGIC:
            raise DataError("not a checkpoint file (bad magic)")
        pos = 8

        def take(fmt):
            nonlocal pos
            size = struct.calcsize(fmt)
            if pos + size > len(data):
                raise DataError("truncated checkpoint")
            vals = struct.unpack_from(fmt, data, pos)
            pos += size
            return vals

        version, flags = take("<II")
        if version != _VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        shapes = []
        for _ in range(2):
            in_dim, n_hidden = take("<II")
            hidden = list(take(f"<{n_hidden}I"))
            (out_dim,) = take("<I")
            shapes.append([in_dim, *hidden, out_dim])
        nets = []
        for dims in shapes:
            weights, biases = [], []
            for fan_in, fan_out in zip(dims[:-1], dims[1:]):
                if pos + 8 * fan_out * (fan_in + 1) > len(data):
                    raise DataError("truncated checkpoint")
                w = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=pos)
                pos += w.nbytes
                b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=pos)
                pos += b.nbytes
                weights.append(w.reshape(fan_out, fan_in).astype(np.float64))
                biases.append(b.astype(np.float64))
            nets.append(ProjectionNet(weights, biases))
        if pos != len(data):
            raise DataError("trailing bytes after checkpoint parameters")
        return cls(nets[0], nets[1], bool(flags & 1))

    def save(self, path):
        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
