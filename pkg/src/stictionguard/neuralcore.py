"""Minimal deterministic neural toolkit with hand-written backprop.

Everything is float64 numpy, single-threaded over samples, and seeded
through numpy's PCG64 generator, so a (seed, data) pair reproduces
bit-identical parameters, losses, and predictions. No autodiff: every
layer implements its analytic backward pass, and finite-difference
checking is the correctness gate for all of them.

Layers operate on batches:

* Conv1D      (B, T, C) -> (B, T, F), kernel-3 cross-correlation with
              zero same-padding so T is preserved.
* MaxPool1D   (B, T, C) -> (B, T//2, C), optional per-block pooling.
* Flatten     (B, T, C) -> (B, T*C).
* Dense       (B, n) -> (B, m).
* LSTM        (B, T, C) -> (B, T, H) or (B, H); gates ordered
              (input, forget, candidate, output), update
              c_t = f*c_prev + i*g, h_t = o*tanh(c_t).

Weight init: uniform +-sqrt(6/(fan_in+fan_out)) for conv/dense, uniform
+-sqrt(1/hidden) for LSTM matrices, zero biases except the LSTM forget
gate section which starts at 1.0. Draws happen layer by layer in
construction order from a single generator.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EmptySplit, IoFailure, LengthMismatch, ShapeMismatch
from .windowing import WindowDataset

CHECKPOINT_MAGIC = b"SGN1"

SIGMOID_CLAMP = 500.0
BCE_EPS = 1e-7


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Logistic function with inputs clamped to +-500 before exponentiation."""
    z = np.clip(z, -SIGMOID_CLAMP, SIGMOID_CLAMP)
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


_ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    # name -> (forward, derivative given (pre-activation z, output a))
    "none": (lambda z: z, lambda z, a: np.ones_like(z)),
    "relu": (relu, lambda z, a: (z > 0).astype(np.float64)),
    "sigmoid": (sigmoid, lambda z, a: a * (1.0 - a)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
}


def _act(name: str) -> tuple[Callable, Callable]:
    if name not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {name!r}")
    return _ACTIVATIONS[name]


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class Layer:
    kind = "base"

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> list[tuple[str, np.ndarray]]:
        return []

    def grads(self) -> list[np.ndarray]:
        return []

    def descriptor(self) -> dict:
        raise NotImplementedError


def _conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padded cross-correlation: (B,T,C) x (K,C,F) -> (B,T,F)."""
    batch, t, c = x.shape
    k, c_w, f = w.shape
    if c != c_w:
        raise ShapeMismatch(f"input has {c} channels, kernels expect {c_w}")
    pad = (k - 1) // 2
    xp = np.zeros((batch, t + k - 1, c), dtype=np.float64)
    xp[:, pad : pad + t, :] = x
    out = np.broadcast_to(b, (batch, t, f)).copy()
    for offset in range(k):
        out += xp[:, offset : offset + t, :] @ w[offset]
    return out


def conv1d_apply(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Single-sample convolution: (T,C) with F width-K kernels -> (T,F)."""
    return _conv1d_forward(np.asarray(x, dtype=np.float64)[None], kernels, bias)[0]


class Conv1D(Layer):
    kind = "conv1d"

    def __init__(
        self,
        in_channels: int,
        filters: int,
        kernel: int = 3,
        activation: str = "relu",
        rng: np.random.Generator | None = None,
    ):
        self.in_channels = in_channels
        self.filters = filters
        self.kernel = kernel
        self.activation = activation
        fan_in = kernel * in_channels
        fan_out = kernel * filters
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        if rng is None:
            self.w = np.zeros((kernel, in_channels, filters))
        else:
            self.w = rng.uniform(-limit, limit, (kernel, in_channels, filters))
        self.b = np.zeros(filters)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._x: np.ndarray | None = None
        self._z: np.ndarray | None = None
        self._a: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3:
            raise ShapeMismatch(f"conv1d expects (B,T,C), got {x.shape}")
        self._x = x
        self._z = _conv1d_forward(x, self.w, self.b)
        fwd, _ = _act(self.activation)
        self._a = fwd(self._z)
        return self._a

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x, z, a = self._x, self._z, self._a
        _, deriv = _act(self.activation)
        dz = grad * deriv(z, a)
        batch, t, _ = x.shape
        k = self.kernel
        pad = (k - 1) // 2
        xp = np.zeros((batch, t + k - 1, self.in_channels), dtype=np.float64)
        xp[:, pad : pad + t, :] = x
        self.db = dz.sum(axis=(0, 1))
        dxp = np.zeros_like(xp)
        for offset in range(k):
            self.dw[offset] = np.einsum("btc,btf->cf", xp[:, offset : offset + t, :], dz)
            dxp[:, offset : offset + t, :] += dz @ self.w[offset].T
        return dxp[:, pad : pad + t, :]

    def params(self):
        return [("w", self.w), ("b", self.b)]

    def grads(self):
        return [self.dw, self.db]

    def descriptor(self):
        return {
            "type": self.kind,
            "in_channels": self.in_channels,
            "filters": self.filters,
            "kernel": self.kernel,
            "activation": self.activation,
        }


class MaxPool1D(Layer):
    kind = "maxpool1d"

    def __init__(self, pool: int = 2):
        self.pool = pool
        self._argmax: np.ndarray | None = None
        self._in_shape: tuple | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3:
            raise ShapeMismatch(f"maxpool expects (B,T,C), got {x.shape}")
        b, t, c = x.shape
        t_out = t // self.pool
        trimmed = x[:, : t_out * self.pool, :].reshape(b, t_out, self.pool, c)
        self._argmax = trimmed.argmax(axis=2)
        self._in_shape = x.shape
        return trimmed.max(axis=2)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        b, t, c = self._in_shape
        t_out = grad.shape[1]
        dx = np.zeros((b, t_out, self.pool, c), dtype=np.float64)
        bi, ti, ci = np.ogrid[:b, :t_out, :c]
        dx[bi, ti, self._argmax, ci] = grad
        full = np.zeros((b, t, c), dtype=np.float64)
        full[:, : t_out * self.pool, :] = dx.reshape(b, t_out * self.pool, c)
        return full

    def descriptor(self):
        return {"type": self.kind, "pool": self.pool}


class Flatten(Layer):
    kind = "flatten"

    def __init__(self):
        self._shape: tuple | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad.reshape(self._shape)

    def descriptor(self):
        return {"type": self.kind}


def dense_apply(
    x: np.ndarray, weights: np.ndarray, bias: np.ndarray, activation: str = "none"
) -> np.ndarray:
    """Single-vector affine map then activation: weights (m,n) @ x (n,) + bias."""
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"weights {weights.shape} incompatible with input {x.shape}")
    fwd, _ = _act(activation)
    return fwd(weights @ x + np.asarray(bias, dtype=np.float64))


class Dense(Layer):
    kind = "dense"

    def __init__(
        self,
        n_in: int,
        n_out: int,
        activation: str = "none",
        rng: np.random.Generator | None = None,
    ):
        self.n_in = n_in
        self.n_out = n_out
        self.activation = activation
        limit = np.sqrt(6.0 / (n_in + n_out))
        self.w = rng.uniform(-limit, limit, (n_in, n_out)) if rng is not None else np.zeros((n_in, n_out))
        self.b = np.zeros(n_out)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._x: np.ndarray | None = None
        self._z: np.ndarray | None = None
        self._a: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeMismatch(f"dense expects (B,{self.n_in}), got {x.shape}")
        self._x = x
        self._z = x @ self.w + self.b
        fwd, _ = _act(self.activation)
        self._a = fwd(self._z)
        return self._a

    def backward(self, grad: np.ndarray) -> np.ndarray:
        _, deriv = _act(self.activation)
        dz = grad * deriv(self._z, self._a)
        self.dw = self._x.T @ dz
        self.db = dz.sum(axis=0)
        return dz @ self.w.T

    def params(self):
        return [("w", self.w), ("b", self.b)]

    def grads(self):
        return [self.dw, self.db]

    def descriptor(self):
        return {
            "type": self.kind,
            "n_in": self.n_in,
            "n_out": self.n_out,
            "activation": self.activation,
        }


@dataclass
class LSTMParams:
    """Gate parameters, columns ordered (input, forget, candidate, output)."""

    wx: np.ndarray  # (input_size, 4H)
    wh: np.ndarray  # (H, 4H)
    b: np.ndarray  # (4H,)

    @property
    def hidden(self) -> int:
        return self.wh.shape[0]


def lstm_step(
    x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, params: LSTMParams
) -> tuple[np.ndarray, np.ndarray]:
    """One recurrent update on plain vectors.

    f, i, o are sigmoids of their affine gate inputs and the candidate is
    tanh; the cell then blends c_t = f*c_prev + i*candidate and exposes
    h_t = o*tanh(c_t).
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    h = params.hidden
    if x_t.shape[0] != params.wx.shape[0] or h_prev.shape[0] != h or c_prev.shape[0] != h:
        raise ShapeMismatch("lstm_step shapes inconsistent with parameters")
    z = x_t @ params.wx + h_prev @ params.wh + params.b
    i = sigmoid(z[:h])
    f = sigmoid(z[h : 2 * h])
    g = np.tanh(z[2 * h : 3 * h])
    o = sigmoid(z[3 * h :])
    c_t = f * c_prev + i * g
    h_t = o * np.tanh(c_t)
    return h_t, c_t


def lstm_sequence(
    inputs: np.ndarray, params: LSTMParams, return_sequence: bool = False
) -> np.ndarray:
    """Iterate lstm_step over a (T, C) input from zero initial state."""
    inputs = np.asarray(inputs, dtype=np.float64)
    h = np.zeros(params.hidden)
    c = np.zeros(params.hidden)
    outputs = []
    for t in range(inputs.shape[0]):
        h, c = lstm_step(inputs[t], h, c, params)
        outputs.append(h)
    return np.vstack(outputs) if return_sequence else h


class LSTM(Layer):
    kind = "lstm"

    def __init__(
        self,
        input_size: int,
        hidden_size: int,
        return_sequences: bool = False,
        rng: np.random.Generator | None = None,
    ):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.return_sequences = return_sequences
        limit = np.sqrt(1.0 / hidden_size)
        if rng is not None:
            self.wx = rng.uniform(-limit, limit, (input_size, 4 * hidden_size))
            self.wh = rng.uniform(-limit, limit, (hidden_size, 4 * hidden_size))
        else:
            self.wx = np.zeros((input_size, 4 * hidden_size))
            self.wh = np.zeros((hidden_size, 4 * hidden_size))
        self.b = np.zeros(4 * hidden_size)
        self.b[hidden_size : 2 * hidden_size] = 1.0  # forget gate starts open
        self.dwx = np.zeros_like(self.wx)
        self.dwh = np.zeros_like(self.wh)
        self.db = np.zeros_like(self.b)
        self._cache: dict | None = None

    @property
    def lstm_params(self) -> LSTMParams:
        return LSTMParams(wx=self.wx, wh=self.wh, b=self.b)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ShapeMismatch(f"lstm expects (B,T,{self.input_size}), got {x.shape}")
        batch, t, _ = x.shape
        hs = self.hidden_size
        h = np.zeros((batch, hs))
        c = np.zeros((batch, hs))
        gates_i = np.empty((t, batch, hs))
        gates_f = np.empty((t, batch, hs))
        gates_g = np.empty((t, batch, hs))
        gates_o = np.empty((t, batch, hs))
        cells = np.empty((t, batch, hs))
        tanh_c = np.empty((t, batch, hs))
        hiddens = np.empty((t, batch, hs))
        h_prev = np.empty((t, batch, hs))
        c_prev = np.empty((t, batch, hs))
        for step in range(t):
            h_prev[step] = h
            c_prev[step] = c
            z = x[:, step, :] @ self.wx + h @ self.wh + self.b
            i = sigmoid(z[:, :hs])
            f = sigmoid(z[:, hs : 2 * hs])
            g = np.tanh(z[:, 2 * hs : 3 * hs])
            o = sigmoid(z[:, 3 * hs :])
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            gates_i[step], gates_f[step], gates_g[step], gates_o[step] = i, f, g, o
            cells[step], tanh_c[step], hiddens[step] = c, tc, h
        self._cache = {
            "x": x,
            "i": gates_i,
            "f": gates_f,
            "g": gates_g,
            "o": gates_o,
            "c": cells,
            "tanh_c": tanh_c,
            "h_prev": h_prev,
            "c_prev": c_prev,
        }
        if self.return_sequences:
            return hiddens.transpose(1, 0, 2)
        return h

    def backward(self, grad: np.ndarray) -> np.ndarray:
        cache = self._cache
        x = cache["x"]
        batch, t, _ = x.shape
        hs = self.hidden_size
        if self.return_sequences:
            dh_out = grad.transpose(1, 0, 2)
        else:
            dh_out = np.zeros((t, batch, hs))
            dh_out[-1] = grad
        self.dwx = np.zeros_like(self.wx)
        self.dwh = np.zeros_like(self.wh)
        self.db = np.zeros_like(self.b)
        dx = np.zeros_like(x)
        dh_rec = np.zeros((batch, hs))
        dc_rec = np.zeros((batch, hs))
        for step in range(t - 1, -1, -1):
            i, f, g, o = cache["i"][step], cache["f"][step], cache["g"][step], cache["o"][step]
            tc = cache["tanh_c"][step]
            dh = dh_out[step] + dh_rec
            do = dh * tc
            dc = dc_rec + dh * o * (1.0 - tc * tc)
            df = dc * cache["c_prev"][step]
            di = dc * g
            dg = dc * i
            dc_rec = dc * f
            dz = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g * g),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            self.dwx += x[:, step, :].T @ dz
            self.dwh += cache["h_prev"][step].T @ dz
            self.db += dz.sum(axis=0)
            dx[:, step, :] = dz @ self.wx.T
            dh_rec = dz @ self.wh.T
        return dx

    def params(self):
        return [("wx", self.wx), ("wh", self.wh), ("b", self.b)]

    def grads(self):
        return [self.dwx, self.dwh, self.db]

    def descriptor(self):
        return {
            "type": self.kind,
            "input_size": self.input_size,
            "hidden_size": self.hidden_size,
            "return_sequences": self.return_sequences,
        }


_LAYER_TYPES = {
    "conv1d": lambda d: Conv1D(
        d["in_channels"], d["filters"], d["kernel"], d["activation"]
    ),
    "maxpool1d": lambda d: MaxPool1D(d["pool"]),
    "flatten": lambda d: Flatten(),
    "dense": lambda d: Dense(d["n_in"], d["n_out"], d["activation"]),
    "lstm": lambda d: LSTM(d["input_size"], d["hidden_size"], d["return_sequences"]),
}


# ---------------------------------------------------------------------------
# network container
# ---------------------------------------------------------------------------


class Network:
    """An ordered layer stack ending in a one-unit sigmoid head.

    ``forward`` returns per-sample probabilities shaped (B,);
    ``backward`` consumes dLoss/dprobability of the same shape and leaves
    per-layer parameter gradients in place.
    """

    def __init__(self, layers: list[Layer], kind: str, input_rows: int, input_cols: int, seed: int):
        self.layers = layers
        self.kind = kind
        self.input_rows = input_rows
        self.input_cols = input_cols
        self.seed = seed

    def forward(self, x: np.ndarray, upto: int | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1] != self.input_rows or x.shape[2] != self.input_cols:
            raise ShapeMismatch(
                f"input {x.shape[1:]} does not match build shape "
                f"({self.input_rows}, {self.input_cols})"
            )
        h = x
        for layer in self.layers[:upto]:
            h = layer.forward(h)
        if upto is None:
            return h[:, 0]
        return h

    def backward(self, dprob: np.ndarray) -> None:
        grad = np.asarray(dprob, dtype=np.float64).reshape(-1, 1)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)

    def parameter_arrays(self) -> list[np.ndarray]:
        return [arr for layer in self.layers for _, arr in layer.params()]

    def parameter_names(self) -> list[str]:
        return [
            f"layer{i}.{name}"
            for i, layer in enumerate(self.layers)
            for name, _ in layer.params()
        ]

    def gradient_arrays(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads()]

    def parameter_count(self) -> int:
        return sum(a.size for a in self.parameter_arrays())

    def snapshot(self) -> list[np.ndarray]:
        return [a.copy() for a in self.parameter_arrays()]

    def restore(self, snapshot: list[np.ndarray]) -> None:
        for arr, saved in zip(self.parameter_arrays(), snapshot):
            arr[...] = saved

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "input_rows": self.input_rows,
            "input_cols": self.input_cols,
            "seed": self.seed,
            "layers": [layer.descriptor() for layer in self.layers],
        }

    @staticmethod
    def from_descriptor(desc: dict) -> "Network":
        layers = [_LAYER_TYPES[d["type"]](d) for d in desc["layers"]]
        return Network(
            layers,
            kind=desc["kind"],
            input_rows=desc["input_rows"],
            input_cols=desc["input_cols"],
            seed=desc["seed"],
        )


# ---------------------------------------------------------------------------
# loss and optimizer
# ---------------------------------------------------------------------------


def bce_loss(
    p: np.ndarray, y: np.ndarray, class_weight: float = 1.0
) -> tuple[float, np.ndarray]:
    """Mean binary cross entropy and its gradient with respect to p.

    Probabilities are clamped to [1e-7, 1 - 1e-7]; where the clamp is
    active the gradient is zero. ``class_weight`` scales the positive
    (stiction) term of the loss.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise LengthMismatch(f"p has shape {p.shape}, y has {y.shape}")
    clipped = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    n = p.size
    loss = -np.mean(
        class_weight * y * np.log(clipped) + (1.0 - y) * np.log(1.0 - clipped)
    )
    grad = (-class_weight * y / clipped + (1.0 - y) / (1.0 - clipped)) / n
    grad = np.where((p > BCE_EPS) & (p < 1.0 - BCE_EPS), grad, 0.0)
    return float(loss), grad


def adam_update(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t: int,
    lr: float = 0.001,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One bias-corrected Adam step; returns (new_param, new_m, new_v)."""
    if param.shape != grad.shape:
        raise ShapeMismatch(f"param {param.shape} vs grad {grad.shape}")
    if t < 1:
        raise ValueError("Adam step count starts at 1")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    """Per-array Adam state applied in place to a fixed parameter list."""

    def __init__(self, params: Sequence[np.ndarray], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ShapeMismatch("gradient list does not match parameter list")
        self.t += 1
        for i, (p, g) in enumerate(zip(self.params, grads)):
            new_p, self.m[i], self.v[i] = adam_update(
                p, g, self.m[i], self.v[i], self.t,
                lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            )
            p[...] = new_p


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 100
    learning_rate: float = 0.001
    patience: int = 3
    batch_size: int = 64
    seed: int = 0
    class_weight: float = 1.0

    def __post_init__(self) -> None:
        if min(self.max_epochs, self.patience, self.batch_size) < 1:
            raise ValueError("epochs, patience, and batch size must be positive")
        if self.learning_rate <= 0 or self.class_weight <= 0:
            raise ValueError("learning rate and class weight must be positive")
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")


@dataclass
class TrainingHistory:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based
    stopped_epoch: int = 0

    def to_text(self) -> str:
        lines = [f"# best_epoch={self.best_epoch} stopped_epoch={self.stopped_epoch}"]
        lines.append("epoch,train_loss,val_loss")
        for i, (tr, va) in enumerate(zip(self.train_losses, self.val_losses), start=1):
            lines.append(f"{i},{tr!r},{va!r}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "TrainingHistory":
        hist = TrainingHistory()
        for line in text.splitlines():
            line = line.strip()
            if line.startswith("#"):
                for token in line[1:].split():
                    key, _, value = token.partition("=")
                    if key == "best_epoch":
                        hist.best_epoch = int(value)
                    elif key == "stopped_epoch":
                        hist.stopped_epoch = int(value)
            elif line and not line.startswith("epoch,"):
                _, tr, va = line.split(",")
                hist.train_losses.append(float(tr))
                hist.val_losses.append(float(va))
        return hist


def predict_proba(
    network: Network, inputs: np.ndarray, batch_size: int = 256
) -> np.ndarray:
    """Forward a sample block in chunks; returns probabilities shaped (N,)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    out = np.empty(len(inputs), dtype=np.float64)
    for lo in range(0, len(inputs), batch_size):
        hi = min(lo + batch_size, len(inputs))
        out[lo:hi] = network.forward(inputs[lo:hi])
    return out


def evaluate_loss(
    network: Network,
    inputs: np.ndarray,
    labels: np.ndarray,
    class_weight: float = 1.0,
) -> float:
    """Mean BCE of the network over a sample block."""
    p = predict_proba(network, inputs)
    loss, _ = bce_loss(p, np.asarray(labels, dtype=np.float64), class_weight)
    return loss


def fit(
    network: Network, dataset: WindowDataset, cfg: TrainConfig = TrainConfig()
) -> TrainingHistory:
    """Mini-batch Adam training with early stopping on validation loss.

    Each epoch shuffles the training block with the seeded generator,
    then measures full train/val losses. Training stops when the
    validation loss has not improved for ``patience`` consecutive epochs
    (or at max_epochs), and the parameters from the best-validation epoch
    are restored before returning.
    """
    train_x, train_y = dataset.train
    val_x, val_y = dataset.val
    if len(train_x) == 0 or len(val_x) == 0:
        raise EmptySplit(
            f"train/val splits must be nonempty, got {len(train_x)}/{len(val_x)}"
        )
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    optimizer = Adam(network.parameter_arrays(), lr=cfg.learning_rate)
    history = TrainingHistory()
    best_val = np.inf
    best_params = network.snapshot()
    bad_epochs = 0

    train_yf = train_y.astype(np.float64)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_x))
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            p = network.forward(train_x[batch])
            _, dp = bce_loss(p, train_yf[batch], cfg.class_weight)
            network.backward(dp)
            optimizer.step(network.gradient_arrays())
        train_loss = evaluate_loss(network, train_x, train_y, cfg.class_weight)
        val_loss = evaluate_loss(network, val_x, val_y, cfg.class_weight)
        history.train_losses.append(train_loss)
        history.val_losses.append(val_loss)
        history.stopped_epoch = epoch
        if val_loss < best_val:
            best_val = val_loss
            best_params = network.snapshot()
            history.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break
    network.restore(best_params)
    return history


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def finite_diff_grad_check(
    network: Network,
    inputs: np.ndarray,
    labels: np.ndarray,
    class_weight: float = 1.0,
    step: float = 1e-5,
    max_params: int = 20000,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per element is |a - n| / max(|a|, |n|, 1e-8). Intended
    for reduced-width networks; refuses to perturb more than
    ``max_params`` parameters.
    """
    if network.parameter_count() > max_params:
        raise ValueError(
            f"network has {network.parameter_count()} parameters; "
            f"check mode supports at most {max_params}"
        )
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)

    p = network.forward(inputs)
    _, dp = bce_loss(p, labels, class_weight)
    network.backward(dp)
    analytic = [g.copy() for g in network.gradient_arrays()]

    worst = 0.0
    for arr, grad in zip(network.parameter_arrays(), analytic):
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + step
            loss_plus, _ = bce_loss(network.forward(inputs), labels, class_weight)
            flat[idx] = original - step
            loss_minus, _ = bce_loss(network.forward(inputs), labels, class_weight)
            flat[idx] = original
            numeric = (loss_plus - loss_minus) / (2.0 * step)
            denom = max(abs(gflat[idx]), abs(numeric), 1e-8)
            worst = max(worst, abs(gflat[idx] - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_network(network: Network, history: TrainingHistory | None, path) -> None:
    """Write an SGN1 checkpoint: descriptor, parameters, training history."""
    params = network.parameter_arrays()
    header = {
        "format_version": 1,
        "descriptor": network.descriptor(),
        "param_shapes": [list(p.shape) for p in params],
        "param_names": network.parameter_names(),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    history_text = (history.to_text() if history is not None else "").encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for p in params:
                fh.write(p.astype("<f8").tobytes())
            fh.write(struct.pack("<I", len(history_text)))
            fh.write(history_text)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_network(path) -> tuple[Network, TrainingHistory]:
    """Read an SGN1 checkpoint back into a Network and its history."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if len(data) < 8 or data[:4] != CHECKPOINT_MAGIC:
        raise IoFailure(f"{path}: not an SGN1 checkpoint")
    (header_len,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8 : 8 + header_len].decode("utf-8"))
    network = Network.from_descriptor(header["descriptor"])
    offset = 8 + header_len
    for arr, shape in zip(network.parameter_arrays(), header["param_shapes"]):
        count = int(np.prod(shape))
        values = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        arr[...] = values.reshape(shape)
        offset += count * 8
    (hist_len,) = struct.unpack("<I", data[offset : offset + 4])
    offset += 4
    history = TrainingHistory.from_text(data[offset : offset + hist_len].decode("utf-8"))
    return network, history
