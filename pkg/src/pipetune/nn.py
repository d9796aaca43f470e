"""Minimal neural-network kernel with hand-written gradients.

Affine layers, residual blocks, an LSTM, categorical utilities, and
an Adam optimizer, all on numpy float64.  Each module follows the same
protocol: ``forward(x)`` caches what backward needs, ``backward(dout)``
accumulates parameter gradients and returns the input gradient.
Gradients are exact (chain rule), so they can be checked against
central finite differences to tight tolerances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class ParamError(ValueError):
    pass


@dataclass
class Param:
    """One trainable tensor and its gradient accumulator."""

    name: str
    values: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        else:
            self.grad = np.asarray(self.grad, dtype=np.float64)
        if self.grad.shape != self.values.shape:
            raise ParamError(f"{self.name}: grad shape {self.grad.shape} != {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ParamError(f"{self.name}: non-finite values")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def zero_grad(self):
        self.grad.fill(0.0)


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform init scaled by fan-in: U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Affine:
    """y = x W^T + b over a batch of row vectors."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, name: str = "affine"):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.w = Param(f"{name}.w", init_uniform(rng, (out_dim, in_dim), in_dim))
        self.b = Param(f"{name}.b", np.zeros(out_dim))
        self._x = None

    def params(self) -> list[Param]:
        return [self.w, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ParamError(f"{self.w.name}: expected (batch, {self.in_dim}), got {x.shape}")
        self._x = x
        return x @ self.w.values.T + self.b.values

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dout = np.asarray(dout, dtype=np.float64)
        if self._x is None:
            raise ParamError("backward before forward")
        self.w.grad += dout.T @ self._x
        self.b.grad += dout.sum(axis=0)
        return dout @ self.w.values


class ResidualBlock:
    """x + A2(relu(A1(x))) with both affines square in ``dim``."""

    def __init__(self, dim: int, rng: np.random.Generator, name: str = "res"):
        self.dim = dim
        self.a1 = Affine(dim, dim, rng, name=f"{name}.a1")
        self.a2 = Affine(dim, dim, rng, name=f"{name}.a2")
        self._pre = None

    def params(self) -> list[Param]:
        return self.a1.params() + self.a2.params()

    def forward(self, x: np.ndarray) -> np.ndarray:
        pre = self.a1.forward(x)
        self._pre = pre
        return x + self.a2.forward(relu(pre))

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dh = self.a2.backward(dout)
        dpre = dh * (self._pre > 0)
        return dout + self.a1.backward(dpre)


class LSTM:
    """Batched LSTM over (batch, time, features); forward returns the final hidden state.

    Gate layout in the stacked weight matrices is input, forget,
    candidate, output.  backward() runs full backpropagation through
    time over the cached sequence and returns d(input).
    """

    def __init__(self, in_dim: int, hidden_dim: int, rng: np.random.Generator, name: str = "lstm"):
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        h = hidden_dim
        self.wx = Param(f"{name}.wx", init_uniform(rng, (4 * h, in_dim), in_dim + h))
        self.wh = Param(f"{name}.wh", init_uniform(rng, (4 * h, h), in_dim + h))
        bias = np.zeros(4 * h)
        bias[h : 2 * h] = 1.0  # open forget gates so memory survives early training
        self.b = Param(f"{name}.b", bias)
        self._cache = None

    def params(self) -> list[Param]:
        return [self.wx, self.wh, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.in_dim:
            raise ParamError(f"{self.wx.name}: expected (batch, time, {self.in_dim}), got {x.shape}")
        if x.shape[1] == 0:
            raise ParamError("empty sequence")
        batch, steps, _ = x.shape
        h_dim = self.hidden_dim
        h = np.zeros((batch, h_dim))
        c = np.zeros((batch, h_dim))
        cache = []
        for t in range(steps):
            z = x[:, t, :] @ self.wx.values.T + h @ self.wh.values.T + self.b.values
            i = sigmoid(z[:, :h_dim])
            f = sigmoid(z[:, h_dim : 2 * h_dim])
            g = np.tanh(z[:, 2 * h_dim : 3 * h_dim])
            o = sigmoid(z[:, 3 * h_dim :])
            c_new = f * c + i * g
            tanh_c = np.tanh(c_new)
            cache.append((x[:, t, :], h, c, i, f, g, o, tanh_c))
            h = o * tanh_c
            c = c_new
        self._cache = (cache, x.shape)
        return h

    def backward(self, dh_final: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise ParamError("backward before forward")
        cache, x_shape = self._cache
        h_dim = self.hidden_dim
        dx = np.zeros(x_shape)
        dh = np.asarray(dh_final, dtype=np.float64)
        dc = np.zeros_like(dh)
        for t in range(len(cache) - 1, -1, -1):
            x_t, h_prev, c_prev, i, f, g, o, tanh_c = cache[t]
            do = dh * tanh_c
            dc = dc + dh * o * (1.0 - tanh_c**2)
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dz = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g**2),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            self.wx.grad += dz.T @ x_t
            self.wh.grad += dz.T @ h_prev
            self.b.grad += dz.sum(axis=0)
            dx[:, t, :] = dz @ self.wx.values
            dh = dz @ self.wh.values
            dc = dc * f
        return dx


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def categorical_sample(rng: np.random.Generator, probs: np.ndarray) -> int:
    """Draw one index from a probability vector via inverse CDF."""
    p = np.asarray(probs, dtype=np.float64)
    u = rng.random()
    return int(min(np.searchsorted(np.cumsum(p), u), len(p) - 1))


def categorical_entropy(probs: np.ndarray) -> float:
    p = np.asarray(probs, dtype=np.float64)
    mask = p > 0
    return float(-(p[mask] * np.log(p[mask])).sum())


def dlogprob_dlogits(probs: np.ndarray, action: int) -> np.ndarray:
    """d log p(action) / d logits = onehot(action) − p."""
    grad = -np.asarray(probs, dtype=np.float64).copy()
    grad[action] += 1.0
    return grad


def dentropy_dlogits(probs: np.ndarray) -> np.ndarray:
    """dH/dz_j = −p_j (log p_j + H) for softmax entropy."""
    p = np.asarray(probs, dtype=np.float64)
    logp = np.log(np.where(p > 0, p, 1.0))
    h = -(p * logp).sum()
    return -p * (logp + h)


@dataclass
class AdamState:
    """Bias-corrected Adam bookkeeping for one parameter list."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def ensure_slots(self, params: list[Param]):
        if not self.first_moment:
            self.first_moment = [np.zeros_like(p.values) for p in params]
            self.second_moment = [np.zeros_like(p.values) for p in params]
        if len(self.first_moment) != len(params):
            raise ParamError("optimizer state does not match parameter list")


def adam_update(state: AdamState, params: list[Param]):
    """One Adam step over ``params``; zeroes their gradients afterwards."""
    state.ensure_slots(params)
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"{p.name}: non-finite gradient")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for k, p in enumerate(params):
        m = state.first_moment[k]
        v = state.second_moment[k]
        m *= b1
        m += (1.0 - b1) * p.grad
        v *= b2
        v += (1.0 - b2) * p.grad**2
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.values -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        p.zero_grad()


FORMAT_VERSION = 1


def save_params(path, params: list[Param], kind: str, meta: dict | None = None):
    """Write parameters as versioned JSON: shapes plus row-major values."""
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "meta": meta or {},
        "params": [
            {
                "name": p.name,
                "shape": list(p.shape),
                "values": p.values.ravel().tolist(),
            }
            for p in params
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_params(path) -> tuple[str, dict, list[Param]]:
    """Read a parameter file; returns (kind, meta, params)."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ParamError(f"unsupported format_version {doc.get('format_version')!r}")
    params = [
        Param(
            name=entry["name"],
            values=np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"]),
        )
        for entry in doc["params"]
    ]
    return doc["kind"], doc.get("meta", {}), params


def load_params_into(path, kind: str, params: list[Param]) -> dict:
    """Load a file into an existing module's parameter list, by position.

    Checks kind, names, and shapes; returns the stored meta dict.
    """
    got_kind, meta, stored = load_params(path)
    if got_kind != kind:
        raise ParamError(f"expected kind {kind!r}, file holds {got_kind!r}")
    if len(stored) != len(params):
        raise ParamError(f"parameter count mismatch: {len(stored)} vs {len(params)}")
    for dst, src in zip(params, stored):
        if dst.name != src.name or dst.shape != src.shape:
            raise ParamError(f"parameter mismatch: {dst.name}{dst.shape} vs {src.name}{src.shape}")
        dst.values[...] = src.values
        dst.zero_grad()
    return meta
