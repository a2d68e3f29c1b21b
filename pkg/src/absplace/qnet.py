"""Small convolutional Q-network in plain numpy.

Only the fixed layer set needed here is supported: 'same'-padded stride-1
convolutions, ReLU, flatten and dense layers. Everything runs in float64.
"""

from __future__ import annotations

import copy
import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

_CKPT_MAGIC = b"ABSQNET\x00"
_CKPT_VERSION = 1


class DivergenceError(FloatingPointError):
    """Loss or gradient became non-finite."""


def default_architecture() -> list[dict[str, Any]]:
    return [
        {"type": "conv", "filters": 8, "kernel": 3},
        {"type": "relu"},
        {"type": "conv", "filters": 16, "kernel": 3},
        {"type": "relu"},
        {"type": "flatten"},
        {"type": "dense", "units": 128},
        {"type": "relu"},
    ]


def mlp_architecture(hidden: tuple[int, ...] = (128,)) -> list[dict[str, Any]]:
    arch: list[dict[str, Any]] = [{"type": "flatten"}]
    for units in hidden:
        arch += [{"type": "dense", "units": units}, {"type": "relu"}]
    return arch


class Conv2D:
    """'Same'-padded stride-1 convolution on channels-last (B, H, W, C) input."""

    def __init__(self, in_channels: int, filters: int, kernel: int = 3):
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        self.in_channels = in_channels
        self.filters = filters
        self.kernel = kernel
        self.pad = kernel // 2
        # rows ordered (kernel row, kernel col, input channel)
        self.W = np.zeros((kernel * kernel * in_channels, filters))
        self.b = np.zeros(filters)
        self.need_input_grad = True

    @property
    def params(self) -> list[np.ndarray]:
        return [self.W, self.b]

    def init(self, rng: np.random.Generator) -> None:
        fan_in = self.W.shape[0]
        self.W[:] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=self.W.shape)
        self.b[:] = 0.0

    def output_shape(self, shape):
        h, w, c = shape
        if c != self.in_channels:
            raise ValueError(f"conv expects {self.in_channels} channels, got {c}")
        return h, w, self.filters

    def forward(self, x: np.ndarray) -> np.ndarray:
        B, H, W, C = x.shape
        k, p = self.kernel, self.pad
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        cols = np.concatenate([xp[:, i:i + H, j:j + W, :] for i in range(k) for j in range(k)],
                              axis=3).reshape(B * H * W, k * k * C)
        self._cache = (cols, x.shape)
        return (cols @ self.W + self.b).reshape(B, H, W, self.filters)

    def backward(self, dout: np.ndarray):
        cols, (B, H, W, C) = self._cache
        k, p = self.kernel, self.pad
        d2 = dout.reshape(-1, self.filters)
        grads = [cols.T @ d2, d2.sum(axis=0)]
        if not self.need_input_grad:
            return None, grads
        dcols = (d2 @ self.W.T).reshape(B, H, W, k * k, C)
        dxp = np.zeros((B, H + 2 * p, W + 2 * p, C))
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + H, j:j + W, :] += dcols[:, :, :, i * k + j, :]
        return dxp[:, p:p + H, p:p + W, :], grads


class Dense:
    def __init__(self, n_in: int, n_out: int):
        self.W = np.zeros((n_in, n_out))
        self.b = np.zeros(n_out)
        self.need_input_grad = True

    @property
    def params(self) -> list[np.ndarray]:
        return [self.W, self.b]

    def init(self, rng: np.random.Generator) -> None:
        self.W[:] = rng.normal(0.0, np.sqrt(2.0 / self.W.shape[0]), size=self.W.shape)
        self.b[:] = 0.0

    def output_shape(self, shape):
        if shape != (self.W.shape[0],):
            raise ValueError(f"dense expects input of size {self.W.shape[0]}, got {shape}")
        return (self.W.shape[1],)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.W + self.b

    def backward(self, dout: np.ndarray):
        grads = [self._x.T @ dout, dout.sum(axis=0)]
        dx = dout @ self.W.T if self.need_input_grad else None
        return dx, grads


class ReLU:
    params: list[np.ndarray] = []
    need_input_grad = True

    def init(self, rng):
        pass

    def output_shape(self, shape):
        return shape

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask, []


class Flatten:
    params: list[np.ndarray] = []
    need_input_grad = True

    def init(self, rng):
        pass

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape), []


class QNetwork:
    """Sequential network mapping a (K, K, C) input to one value per action."""

    def __init__(self, architecture: list[dict[str, Any]], input_shape: tuple[int, ...],
                 n_actions: int):
        self.architecture = copy.deepcopy(architecture)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.n_actions = int(n_actions)
        self.layers = []
        shape = self.input_shape
        for spec in self.architecture:
            kind = spec["type"]
            if kind == "conv":
                layer = Conv2D(shape[-1], int(spec["filters"]), int(spec.get("kernel", 3)))
            elif kind == "dense":
                layer = Dense(shape[0], int(spec["units"]))
            elif kind == "relu":
                layer = ReLU()
            elif kind == "flatten":
                layer = Flatten()
            else:
                raise ValueError(f"unknown layer type {kind!r}")
            shape = layer.output_shape(shape)
            self.layers.append(layer)
        if len(shape) != 1:
            self.layers.append(Flatten())
            shape = self.layers[-1].output_shape(shape)
        head = Dense(shape[0], self.n_actions)
        self.layers.append(head)
        # all weights live in one flat buffer; layer arrays are views into it
        total = sum(p.size for layer in self.layers for p in layer.params)
        self.flat = np.zeros(total)
        pos = 0
        for layer in self.layers:
            for name in ("W", "b"):
                if hasattr(layer, name):
                    arr = getattr(layer, name)
                    view = self.flat[pos:pos + arr.size].reshape(arr.shape)
                    setattr(layer, name, view)
                    pos += arr.size
        # no layer needs d(loss)/d(input) before the first parametrized one
        for layer in self.layers:
            layer.need_input_grad = False
            if layer.params:
                break

    @classmethod
    def build(cls, architecture, input_shape, n_actions, rng: np.random.Generator) -> QNetwork:
        net = cls(architecture, input_shape, n_actions)
        for layer in net.layers:
            layer.init(rng)
        return net

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> QNetwork:
        return sync_target(self)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Q-values for one input or a batch; single-channel inputs may omit C."""
        x = np.asarray(x, dtype=float)
        shape = self.input_shape
        if shape[-1] == 1 and x.shape[-len(shape) + 1:] == shape[:-1]:
            x = x[..., None]
        if x.shape == shape:
            x = x[None]
        if x.shape[1:] != shape:
            raise ValueError(f"expected input shape {shape}, got {x.shape[1:]}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout: np.ndarray) -> list[np.ndarray]:
        grads_rev = []
        for layer in reversed(self.layers):
            if dout is None:
                grads_rev.append([])
                continue
            dout, g = layer.backward(dout)
            grads_rev.append(g)
        return [g for gs in reversed(grads_rev) for g in gs]

    def flat_grad(self, grads: list[np.ndarray]) -> np.ndarray:
        return np.concatenate([g.ravel() for g in grads])

    def flops(self) -> int:
        """Multiply-adds of one forward pass (depends on input shape and head only)."""
        total = 0
        shape = self.input_shape
        for layer in self.layers:
            out = layer.output_shape(shape)
            if isinstance(layer, Conv2D):
                total += layer.W.size * out[1] * out[2]
            elif isinstance(layer, Dense):
                total += layer.W.size
            shape = out
        return total


def loss_and_grad(net: QNetwork, states: np.ndarray, actions: np.ndarray,
                  targets: np.ndarray, weights: np.ndarray):
    """Importance-weighted squared TD loss ``mean(w * (y - Q(s, a))^2)``.

    Returns ``(loss, grads, td_errors)`` where grads align with ``net.params``.
    """
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=float)
    weights = np.asarray(weights, dtype=float)
    n = len(actions)
    if not (len(targets) == n and len(weights) == n and len(states) == n):
        raise ValueError("batch, targets and weights must have the same length")
    q = net.forward(states)
    rows = np.arange(n)
    td = targets - q[rows, actions]
    loss = float(np.mean(weights * td * td))
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss}")
    dq = np.zeros_like(q)
    dq[rows, actions] = -2.0 * weights * td / n
    grads = net.backward(dq)
    return loss, grads, td


def weighted_loss(td_errors, weights) -> float:
    td = np.asarray(td_errors, dtype=float)
    return float(np.mean(np.asarray(weights, dtype=float) * td * td))


class Adam:
    """Adam over a flat parameter vector, with global-norm gradient clipping."""

    def __init__(self, n_params: int, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, clip_norm: float | None = 10.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> float:
        """Update ``params`` in place; returns the pre-clip gradient norm."""
        norm = float(np.sqrt(grad @ grad))
        if not np.isfinite(norm):
            raise DivergenceError("non-finite gradient")
        if self.clip_norm is not None and norm > self.clip_norm:
            grad = grad * (self.clip_norm / norm)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1.0 - b1) * grad
        self.v *= b2
        self.v += (1.0 - b2) * (grad * grad)
        step_size = self.lr * np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        eps_hat = self.eps * np.sqrt(1.0 - b2 ** self.t)
        params -= step_size * self.m / (np.sqrt(self.v) + eps_hat)
        return norm


def clip_gradients(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm <= max_norm:
        return grads
    return [g * (max_norm / norm) for g in grads]


def sync_target(net: QNetwork) -> QNetwork:
    """Independent deep copy of ``net`` (fresh layer caches, copied weights)."""
    twin = QNetwork(net.architecture, net.input_shape, net.n_actions)
    twin.flat[:] = net.flat
    return twin


def save_network(net: QNetwork, path: str | Path) -> None:
    desc = {
        "architecture": net.architecture,
        "input_shape": list(net.input_shape),
        "n_actions": net.n_actions,
        "param_shapes": [list(p.shape) for p in net.params],
    }
    blob = json.dumps(desc, sort_keys=True).encode()
    flat = net.flat.astype("<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<8sII", _CKPT_MAGIC, _CKPT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", flat.size))
        fh.write(flat.tobytes())


def load_network(path: str | Path) -> QNetwork:
    data = Path(path).read_bytes()
    magic, version, n = struct.unpack_from("<8sII", data)
    if magic != _CKPT_MAGIC or version != _CKPT_VERSION:
        raise ValueError(f"not a Q-network checkpoint (version {version})")
    off = struct.calcsize("<8sII")
    desc = json.loads(data[off:off + n])
    off += n
    (count,) = struct.unpack_from("<Q", data, off)
    off += 8
    flat = np.frombuffer(data, dtype="<f8", count=count, offset=off)
    net = QNetwork(desc["architecture"], tuple(desc["input_shape"]), desc["n_actions"])
    if count != net.flat.size:
        raise ValueError("checkpoint parameter count does not match the architecture")
    net.flat[:] = flat
    return net
