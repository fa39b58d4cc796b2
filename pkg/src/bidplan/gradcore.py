"""Small fully connected networks with hand-written reverse-mode gradients.

Parameters live in one flat float64 vector so that optimizers, checkpoints and
finite-difference checks can treat every network the same way.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, NonFiniteError


class ParamVector:
    """Flat parameter storage with named, shaped views."""

    def __init__(self, shapes):
        self.layout = {}
        offset = 0
        for name, shape in shapes:
            size = int(np.prod(shape))
            self.layout[name] = (slice(offset, offset + size), tuple(shape))
            offset += size
        self.values = np.zeros(offset)

    def __len__(self):
        return self.values.size

    def view(self, name, flat=None):
        sl, shape = self.layout[name]
        src = self.values if flat is None else flat
        return src[sl].reshape(shape)

    def copy(self):
        other = ParamVector([(k, shape) for k, (_, shape) in self.layout.items()])
        other.values = self.values.copy()
        return other


_ACTIVATIONS = {
    "tanh": (np.tanh, lambda y: 1.0 - y * y),
    "identity": (lambda x: x, lambda y: np.ones_like(y)),
}


class MLP:
    """Affine layers with a pointwise nonlinearity between them; linear output.

    ``forward`` accepts one input vector or a batch of row vectors.
    """

    def __init__(self, sizes, activation="tanh"):
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise DomainError(f"invalid layer sizes {sizes}")
        if activation not in _ACTIVATIONS:
            raise DomainError(f"unknown activation {activation!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.activation = activation
        shapes = []
        for k, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            shapes += [(f"W{k}", (a, b)), (f"b{k}", (b,))]
        self.params = ParamVector(shapes)

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    @property
    def n_in(self):
        return self.sizes[0]

    @property
    def n_out(self):
        return self.sizes[-1]

    def init(self, rng, gain=1.0, zero_last=False):
        for k in range(self.n_layers):
            fan_in, fan_out = self.sizes[k], self.sizes[k + 1]
            W = self.params.view(f"W{k}")
            W[...] = rng.standard_normal((fan_in, fan_out)) * gain / math.sqrt(fan_in)
            self.params.view(f"b{k}")[...] = 0.0
        if zero_last:
            self.params.view(f"W{self.n_layers - 1}")[...] = 0.0
        return self

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in or x.ndim > 2:
            raise DomainError(f"expected input with {self.n_in} features, got shape {x.shape}")
        return x

    def forward(self, x, params=None):
        out, _ = self.forward_cached(x, params)
        return out

    def forward_cached(self, x, params=None):
        x = self._check(x)
        single = x.ndim == 1
        h = x[None, :] if single else x
        act, _ = _ACTIVATIONS[self.activation]
        flat = self.params.values if params is None else params
        acts = [h]
        for k in range(self.n_layers):
            h = h @ self.params.view(f"W{k}", flat) + self.params.view(f"b{k}", flat)
            if k < self.n_layers - 1:
                h = act(h)
            acts.append(h)
        out = h[0] if single else h
        return out, (single, acts)

    def backward(self, x, upstream, params=None):
        """Return ``(param_grad, input_grad)`` for the vector-Jacobian product."""
        _, cache = self.forward_cached(x, params)
        return self.backward_cached(cache, upstream, params)

    def backward_cached(self, cache, upstream, params=None):
        single, acts = cache
        g = np.asarray(upstream, dtype=np.float64)
        g = g[None, :] if single else g
        if g.shape != acts[-1].shape:
            raise DomainError(f"upstream gradient shape {g.shape} != output shape {acts[-1].shape}")
        _, dact = _ACTIVATIONS[self.activation]
        flat = self.params.values if params is None else params
        grad = np.zeros_like(self.params.values)
        for k in reversed(range(self.n_layers)):
            if k < self.n_layers - 1:
                g = g * dact(acts[k + 1])
            self.params.view(f"W{k}", grad)[...] = acts[k].T @ g
            self.params.view(f"b{k}", grad)[...] = g.sum(axis=0)
            g = g @ self.params.view(f"W{k}", flat).T
        return grad, (g[0] if single else g)

    def descriptor(self):
        return {"sizes": list(self.sizes), "activation": self.activation}


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_grad_norm: float | None = None

    def __post_init__(self):
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params: ParamVector, grad):
        """Update ``params`` in place with one adaptive-moment step."""
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != params.values.shape:
            raise DomainError(f"gradient shape {grad.shape} != parameter shape {params.values.shape}")
        if not np.all(np.isfinite(grad)):
            bad = [k for k, (sl, _) in params.layout.items() if not np.all(np.isfinite(grad[sl]))]
            raise NonFiniteError(f"non-finite gradient entries in {bad}; step rejected")
        if self.max_grad_norm is not None:
            norm = float(np.linalg.norm(grad))
            if norm > self.max_grad_norm:
                grad = grad * (self.max_grad_norm / norm)
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        params.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params


def finite_difference_grad(f, x, step=1e-5):
    """Central differences of scalar ``f`` at every coordinate of ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + step
        hi = f(x)
        x.flat[i] = orig - step
        lo = f(x)
        x.flat[i] = orig
        g.flat[i] = (hi - lo) / (2 * step)
    return g


def save_params(path, nets: dict, meta=None):
    """Checkpoint named networks: one JSON manifest line, then one value per line."""
    manifest = {
        "meta": meta or {},
        "nets": {
            name: {
                **net.descriptor(),
                "layout": {k: [sl.start, sl.stop, list(shape)] for k, (sl, shape) in net.params.layout.items()},
            }
            for name, net in nets.items()
        },
    }
    with Path(path).open("w") as fh:
        fh.write(json.dumps(manifest, sort_keys=True) + "\n")
        for name, net in nets.items():
            for v in net.params.values:
                fh.write(f"{name} {float(v):.17g}\n")
    return Path(path)


def load_params(path):
    """Inverse of :func:`save_params`; returns ``(nets, meta)``."""
    with Path(path).open() as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DomainError(f"{path}: empty checkpoint")
    manifest = json.loads(lines[0])
    nets = {name: MLP(d["sizes"], d["activation"]) for name, d in manifest["nets"].items()}
    fill = {name: [] for name in nets}
    for lineno, line in enumerate(lines[1:], start=2):
        name, _, value = line.partition(" ")
        if name not in fill:
            raise DomainError(f"{path}:{lineno}: unknown network {name!r}")
        fill[name].append(float(value))
    for name, net in nets.items():
        if len(fill[name]) != len(net.params):
            raise DomainError(f"{path}: {name} has {len(fill[name])} values, expected {len(net.params)}")
        net.params.values[:] = fill[name]
        layout = manifest["nets"][name]["layout"]
        for k, (sl, shape) in net.params.layout.items():
            if layout[k] != [sl.start, sl.stop, list(shape)]:
                raise DomainError(f"{path}: layout mismatch for {name}.{k}")
    return nets, manifest["meta"]
