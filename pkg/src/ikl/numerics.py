"""Seeded randomness, small fully connected networks with explicit backprop, Adam,
and a central-difference gradient oracle.

Everything works on float64 numpy arrays. Row ``i`` of an input matrix is one
example; weight matrices are stored ``(fan_in, fan_out)`` so a layer computes
``x @ W + b``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np


class NumericError(ArithmeticError):
    """Raised when a computation meets non-finite values."""


class Prng:
    """Deterministic random stream addressed by ``(seed, path)``.

    ``child(name)`` derives an independent substream; the same seed and path
    always give the same numbers, regardless of what other streams were used.
    """

    def __init__(self, seed: int, path: tuple[str, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        words = [self.seed & 0xFFFFFFFF, (self.seed >> 32) & 0xFFFFFFFF]
        for name in self.path:
            digest = hashlib.sha256(name.encode()).digest()
            words.extend(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))
        self.gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))

    def child(self, name: str) -> "Prng":
        return Prng(self.seed, self.path + (str(name),))

    def normal(self, shape) -> np.ndarray:
        return self.gen.standard_normal(shape)

    def uniform(self, low=0.0, high=1.0, shape=None) -> np.ndarray:
        return self.gen.uniform(low, high, shape)

    def integers(self, low, high=None, shape=None) -> np.ndarray:
        return self.gen.integers(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def __repr__(self):
        return f"Prng(seed={self.seed}, path={self.path!r})"


def _as_matrix(x, name="inputs") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {x.shape}")
    return x


@dataclass
class Mlp:
    """Fully connected ReLU network; the last layer is linear."""

    weights: list
    biases: list
    activation: str = "relu"

    def __post_init__(self):
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        self.weights = [np.array(w, dtype=np.float64, ndmin=2) for w in self.weights]
        self.biases = [np.array(b, dtype=np.float64).reshape(-1) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[1] != b.shape[0]:
                raise ValueError(f"layer {i}: weight {w.shape} vs bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: input width {w.shape[0]} does not match "
                                 f"previous output {self.weights[i - 1].shape[1]}")

    @classmethod
    def init(cls, sizes, prng: Prng) -> "Mlp":
        """Glorot-uniform weights, zero biases. ``sizes`` lists layer widths."""
        weights, biases = [], []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(prng.child(f"layer{i}").uniform(-limit, limit, (fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @classmethod
    def identity(cls, sizes) -> "Mlp":
        """Rectangular identity weights. Acts as the identity on non-negative inputs
        as long as every hidden width is at least the input width."""
        if sizes[0] != sizes[-1] or min(sizes) < sizes[0]:
            raise ValueError("identity network needs equal in/out dims and wide enough hidden layers")
        weights = [np.eye(a, b) for a, b in zip(sizes[:-1], sizes[1:])]
        return cls(weights, [np.zeros(b) for b in sizes[1:]])

    @classmethod
    def zeros(cls, sizes) -> "Mlp":
        return cls([np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(b) for b in sizes[1:]])

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim] + [w.shape[1] for w in self.weights]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)

    # parameter vector <-> layers

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def unflatten(self, vec) -> "Mlp":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {vec.shape}")
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(vec[pos:pos + w.size].reshape(w.shape).copy())
            pos += w.size
            biases.append(vec[pos:pos + b.size].copy())
            pos += b.size
        return Mlp(weights, biases, self.activation)

    def flatten_grads(self, grads) -> np.ndarray:
        return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])

    # forward / backward

    def _forward(self, x):
        x = _as_matrix(x)
        if x.shape[1] != self.input_dim:
            raise ValueError(f"network expects {self.input_dim} input columns, got {x.shape[1]}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ w + b
            h = a if i == last else np.maximum(a, 0.0)
            acts.append(h)
        return acts

    def forward(self, x) -> np.ndarray:
        return self._forward(x)[-1]

    __call__ = forward

    def backprop(self, x, upstream):
        """Gradients of ``sum(upstream * forward(x))``.

        Returns ``(param_grads, input_grads)`` where ``param_grads`` is a list of
        ``(dW, db)`` per layer.
        """
        acts = self._forward(x)
        g = _as_matrix(upstream, "upstream")
        if g.shape != acts[-1].shape:
            raise ValueError(f"upstream shape {g.shape} does not match output {acts[-1].shape}")
        grads = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                g = g * (acts[i + 1] > 0)
            grads[i] = (acts[i].T @ g, g.sum(axis=0))
            g = g @ self.weights[i].T
        return grads, g

    def input_jacobian(self, x) -> np.ndarray:
        """Per-row Jacobians ``d out / d in`` stacked as ``(n, input_dim, output_dim)``."""
        acts = self._forward(x)
        n = acts[0].shape[0]
        t = np.broadcast_to(np.eye(self.input_dim), (n, self.input_dim, self.input_dim))
        for i, w in enumerate(self.weights):
            t = t @ w
            if i != len(self.weights) - 1:
                t = t * (acts[i + 1] > 0)[:, None, :]
        return t

    def jacobian_vjp(self, x, upstream):
        """Parameter gradients of ``sum(upstream * input_jacobian(x))``.

        ReLU masks are piecewise constant in the parameters, so the Jacobian only
        depends on the weights; bias gradients are zero almost everywhere.
        """
        acts = self._forward(x)
        n = acts[0].shape[0]
        tangents = [np.broadcast_to(np.eye(self.input_dim), (n, self.input_dim, self.input_dim))]
        masks = []
        for i, w in enumerate(self.weights):
            t = tangents[-1] @ w
            if i != len(self.weights) - 1:
                mask = (acts[i + 1] > 0)[:, None, :]
                masks.append(mask)
                t = t * mask
            tangents.append(t)
        g = np.asarray(upstream, dtype=np.float64)
        if g.shape != tangents[-1].shape:
            raise ValueError(f"upstream shape {g.shape} does not match Jacobian {tangents[-1].shape}")
        grads = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                g = g * masks[i]
            t_in = tangents[i]
            grads[i] = (np.einsum("nki,nko->io", t_in, g), np.zeros_like(self.biases[i]))
            g = g @ self.weights[i].T
        return grads

    # serialization

    def to_dict(self) -> dict:
        return {"layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in zip(self.weights, self.biases)],
                "activation": self.activation}

    @classmethod
    def from_dict(cls, doc: dict) -> "Mlp":
        layers = doc["layers"]
        return cls([np.array(l["w"], dtype=np.float64, ndmin=2) for l in layers],
                   [np.array(l["b"], dtype=np.float64) for l in layers],
                   doc.get("activation", "relu"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Mlp":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        if not isinstance(other, Mlp):
            return NotImplemented
        return (self.activation == other.activation and len(self.weights) == len(other.weights)
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
                and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases)))


def mlp_forward(net: Mlp, inputs) -> np.ndarray:
    return net.forward(inputs)


def mlp_backprop(net: Mlp, inputs, upstream_grad):
    return net.backprop(inputs, upstream_grad)


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def copy(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.t,
                         None if self.m is None else self.m.copy(),
                         None if self.v is None else self.v.copy())


def adam_step(state: AdamState, params, grads):
    """One descent step. Returns ``(new_params, new_state)``; inputs are not mutated."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ValueError(f"params {params.shape} and grads {grads.shape} differ in shape")
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise NumericError(f"non-finite gradient at index {int(bad[0])}")
    m = np.zeros_like(params) if state.m is None else state.m
    v = np.zeros_like(params) if state.v is None else state.v
    if m.shape != params.shape:
        raise ValueError("Adam accumulators do not match parameter shape")
    t = state.t + 1
    m = state.beta1 * m + (1 - state.beta1) * grads
    v = state.beta2 * v + (1 - state.beta2) * grads * grads
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(state.lr, state.beta1, state.beta2, state.eps, t, m, v)


def finite_difference(f, point, h=1e-5) -> np.ndarray:
    point = np.array(point, dtype=np.float64)
    grad = np.empty_like(point)
    for i in range(point.size):
        step = np.zeros_like(point)
        step.flat[i] = h
        hi, lo = f(point + step), f(point - step)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError(f"objective is not finite near coordinate {i}")
        grad.flat[i] = (hi - lo) / (2 * h)
    return grad


def check_gradient(f, grad, point, h=1e-5) -> float:
    """Max relative error between ``grad`` (analytic, at ``point``) and central
    differences of scalar ``f``. ``grad`` may be an array or a callable."""
    if h <= 0:
        raise ValueError("step must be positive")
    analytic = np.asarray(grad(point) if callable(grad) else grad, dtype=np.float64)
    numeric = finite_difference(f, point, h)
    if analytic.shape != numeric.shape:
        raise ValueError(f"analytic gradient shape {analytic.shape} vs point {numeric.shape}")
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)))
