"""Causal 1-D convolutional network with skip connections and weight normalization.

Every convolution is causal with zero padding: ``y[j, t] = b[j] + sum_i sum_s
x[i, t - s] * w[j, i, s]`` with ``x[:, t] = 0`` for ``t < 0``. Kernels are
stored as a direction ``v`` and a gain ``g`` per output channel, with
``w[j] = g[j] * v[j] / ||v[j]||``.

The convolution kernels are compiled with numba and use one fixed summation
order (bias, then input channels, then taps from the most recent sample
back), so a forward pass is bit-reproducible and a sample's value never
depends on where it sits in the sequence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numba
import numpy as np

from ..exceptions import ChannelMismatch

SLOPE = 0.1
FORMAT_VERSION = 1


@numba.njit(cache=True)
def _conv_forward(x, w, b, order):
    n_out, n_in, k = w.shape
    T = x.shape[1]
    y = np.empty((n_out, T))
    for o in range(n_out):
        for t in range(T):
            acc = b[o]
            for m in range(n_in):
                i = order[m]
                for s in range(k):
                    if t - s >= 0:
                        acc += x[i, t - s] * w[o, i, s]
            y[o, t] = acc
    return y


@numba.njit(cache=True)
def _conv_backward(x, w, dy):
    n_out, n_in, k = w.shape
    T = x.shape[1]
    dx = np.zeros((n_in, T))
    dw = np.zeros((n_out, n_in, k))
    db = np.zeros(n_out)
    for o in range(n_out):
        acc = 0.0
        for t in range(T):
            acc += dy[o, t]
        db[o] = acc
        for i in range(n_in):
            for s in range(k):
                acc = 0.0
                for t in range(s, T):
                    acc += dy[o, t] * x[i, t - s]
                dw[o, i, s] = acc
    for i in range(n_in):
        for t in range(T):
            acc = 0.0
            for o in range(n_out):
                for s in range(k):
                    if t + s < T:
                        acc += dy[o, t + s] * w[o, i, s]
            dx[i, t] = acc
    return dx, dw, db


def leaky_relu(x, slope: float = SLOPE):
    """``x`` where ``x >= 0``, ``slope * x`` elsewhere."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, slope * x)


def leaky_relu_grad(x, slope: float = SLOPE):
    """Derivative of :func:`leaky_relu`, taken as 1 at exactly 0."""
    return np.where(np.asarray(x) >= 0, 1.0, slope)


@dataclass
class ConvLayer:
    """Weight-normalized causal convolution; ``v`` has shape ``(out, in, kernel)``."""

    v: np.ndarray
    g: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.v = np.array(self.v, dtype=np.float64)
        if self.v.ndim != 3:
            raise ValueError(f"v must be (out, in, kernel), got shape {self.v.shape}")
        n_out = self.v.shape[0]
        self.g = np.array(self.g, dtype=np.float64).reshape(n_out)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(n_out)

    @property
    def out_channels(self) -> int:
        return self.v.shape[0]

    @property
    def in_channels(self) -> int:
        return self.v.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.v.shape[2]

    def v_norm(self) -> np.ndarray:
        # summing sorted squares makes the norm independent of the input-channel order
        sq = np.sort((self.v * self.v).reshape(self.v.shape[0], -1), axis=1)
        norm = np.sqrt(np.sum(sq, axis=1))
        if np.any(norm <= 0):
            raise ValueError("every output channel needs a non-zero direction v")
        return norm

    def weight(self) -> np.ndarray:
        """Effective kernel ``g * v / ||v||`` per output channel."""
        return (self.g / self.v_norm())[:, None, None] * self.v

    @property
    def n_parameters(self) -> int:
        """Effective trainable parameters (kernel entries plus biases)."""
        return self.v.size + self.bias.size

    def copy(self) -> "ConvLayer":
        return ConvLayer(self.v.copy(), self.g.copy(), self.bias.copy())

    def to_dict(self) -> dict:
        return {"shape": list(self.v.shape), "v": self.v.ravel().tolist(), "g": self.g.tolist(),
                "bias": self.bias.tolist()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ConvLayer":
        return cls(np.asarray(data["v"], dtype=np.float64).reshape(data["shape"]), data["g"], data["bias"])

    @classmethod
    def initialize(cls, in_channels: int, out_channels: int, kernel_size: int, rng) -> "ConvLayer":
        """Fan-in uniform direction, gain equal to its norm (so ``w == v``), zero bias."""
        bound = 1.0 / np.sqrt(in_channels * kernel_size)
        v = rng.uniform(-bound, bound, size=(out_channels, in_channels, kernel_size))
        g = np.sqrt(np.sum(v * v, axis=(1, 2)))
        return cls(v, g, np.zeros(out_channels))


def conv1d_causal(x, layer: ConvLayer, channel_order=None) -> np.ndarray:
    """Causal convolution of an ``(in_channels, T)`` array.

    ``channel_order`` fixes the order in which input channels are summed
    (default ascending).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != layer.in_channels:
        raise ChannelMismatch(f"layer expects {layer.in_channels} input channels, got shape {x.shape}")
    order = _channel_order(layer.in_channels, channel_order)
    return _conv_forward(x, layer.weight(), layer.bias, order)


def _channel_order(n, order):
    if order is None:
        return np.arange(n, dtype=np.int64)
    order = np.asarray(order, dtype=np.int64)
    if sorted(order.tolist()) != list(range(n)):
        raise ValueError(f"channel_order must be a permutation of range({n})")
    return order


@dataclass
class Block:
    conv: ConvLayer
    #: 1x1 projection when the channel count changes, identity otherwise
    skip: ConvLayer | None = None

    def copy(self) -> "Block":
        return Block(self.conv.copy(), None if self.skip is None else self.skip.copy())


@dataclass
class CnnModel:
    blocks: list
    head: ConvLayer
    slope: float = SLOPE
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.in_channels
        for b, block in enumerate(self.blocks):
            if block.conv.in_channels != n:
                raise ChannelMismatch(f"block {b} expects {block.conv.in_channels} channels, gets {n}")
            if block.skip is None and block.conv.out_channels != n:
                raise ChannelMismatch(f"block {b} changes channel count and needs a skip projection")
            if block.skip is not None and (block.skip.kernel_size != 1 or block.skip.in_channels != n
                                           or block.skip.out_channels != block.conv.out_channels):
                raise ChannelMismatch(f"block {b} skip projection has the wrong shape")
            n = block.conv.out_channels
        if self.head.in_channels != n or self.head.out_channels != 1 or self.head.kernel_size != 1:
            raise ChannelMismatch("head must be a 1x1 convolution to one channel")

    @classmethod
    def initialize(cls, in_channels: int = 6, channels: int = 16, kernel_size: int = 4, n_blocks: int = 3,
                   seed: int = 0) -> "CnnModel":
        rng = np.random.Generator(np.random.PCG64(seed))
        blocks, n = [], in_channels
        for _ in range(n_blocks):
            conv = ConvLayer.initialize(n, channels, kernel_size, rng)
            skip = ConvLayer.initialize(n, channels, 1, rng) if n != channels else None
            blocks.append(Block(conv, skip))
            n = channels
        return cls(blocks, ConvLayer.initialize(n, 1, 1, rng))

    @property
    def in_channels(self) -> int:
        return self.blocks[0].conv.in_channels if self.blocks else self.head.in_channels

    @property
    def receptive_field(self) -> int:
        return 1 + sum(b.conv.kernel_size - 1 for b in self.blocks)

    def layers(self) -> list:
        """``(name, layer)`` pairs in a fixed order."""
        out = []
        for i, block in enumerate(self.blocks):
            out.append((f"blocks.{i}.conv", block.conv))
            if block.skip is not None:
                out.append((f"blocks.{i}.skip", block.skip))
        out.append(("head", self.head))
        return out

    def parameters(self) -> dict:
        """Stored parameter arrays by name (live references, not copies)."""
        out = {}
        for name, layer in self.layers():
            out[f"{name}.v"] = layer.v
            out[f"{name}.g"] = layer.g
            out[f"{name}.bias"] = layer.bias
        return out

    @property
    def n_parameters(self) -> int:
        """Effective trainable parameters: kernel weights plus biases."""
        return sum(layer.n_parameters for _, layer in self.layers())

    @property
    def n_stored_parameters(self) -> int:
        """Stored values including the per-channel weight-norm gains."""
        return sum(p.size for p in self.parameters().values())

    def copy(self) -> "CnnModel":
        return CnnModel([b.copy() for b in self.blocks], self.head.copy(), self.slope, dict(self.meta))

    def predict(self, x) -> np.ndarray:
        return cnn_forward(self, x)

    def to_dict(self) -> dict:
        return {
            "format": "vcsflow.cnn", "version": FORMAT_VERSION, "slope": self.slope,
            "receptive_field": self.receptive_field, "n_parameters": self.n_parameters,
            "blocks": [{"conv": b.conv.to_dict(), "skip": None if b.skip is None else b.skip.to_dict()}
                       for b in self.blocks],
            "head": self.head.to_dict(), "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CnnModel":
        if data.get("format") != "vcsflow.cnn":
            raise ValueError("not a CNN model file")
        blocks = [Block(ConvLayer.from_dict(b["conv"]), None if b["skip"] is None else ConvLayer.from_dict(b["skip"]))
                  for b in data["blocks"]]
        return cls(blocks, ConvLayer.from_dict(data["head"]), float(data["slope"]), dict(data.get("meta", {})))

    def save(self, path, provenance: Mapping | None = None) -> None:
        payload = self.to_dict()
        if provenance:
            payload["provenance"] = dict(provenance)
        # json writes floats with repr, so a reload is exact
        Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CnnModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _as_input(model: CnnModel, x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != model.in_channels:
        raise ChannelMismatch(f"model expects ({model.in_channels}, T) input, got shape {x.shape}")
    return x


def _forward_trace(model: CnnModel, x, channel_order=None):
    trace = []
    a = x
    for b, block in enumerate(model.blocks):
        order = _channel_order(a.shape[0], channel_order if b == 0 else None)
        z = _conv_forward(a, block.conv.weight(), block.conv.bias, order)
        h = np.where(z >= 0, z, model.slope * z)
        skip = a if block.skip is None else _conv_forward(a, block.skip.weight(), block.skip.bias, order)
        trace.append((a, z))
        a = h + skip
    head_order = _channel_order(a.shape[0], None)
    y = _conv_forward(a, model.head.weight(), model.head.bias, head_order)[0]
    return y, a, trace


def cnn_forward(model: CnnModel, x, channel_order=None) -> np.ndarray:
    """Full-sequence causal prediction for a ``(channels, T)`` input; returns ``T`` values.

    ``channel_order`` sets the summation order over the network's input
    channels in the first block.
    """
    return _forward_trace(model, _as_input(model, x), channel_order)[0]


def _weightnorm_backward(layer: ConvLayer, dw: np.ndarray):
    norm = layer.v_norm()
    dg = np.sum(layer.v * dw, axis=(1, 2)) / norm
    dv = (layer.g / norm)[:, None, None] * dw - (layer.g * dg / norm**2)[:, None, None] * layer.v
    return dv, dg


def mse_loss(model: CnnModel, x, target, loss_start: int = 0) -> float:
    y = cnn_forward(model, x)
    r = y[loss_start:] - np.asarray(target, dtype=np.float64)[loss_start:]
    return float(np.mean(r * r))


def cnn_gradients(model: CnnModel, x, target, loss_start: int = 0):
    """MSE loss and its exact gradient for every stored parameter.

    The loss is the mean squared residual over ``t >= loss_start``. Returns
    ``(loss, grads)`` where ``grads`` maps the names of
    :meth:`CnnModel.parameters` to arrays of the same shape.
    """
    x = _as_input(model, x)
    target = np.asarray(target, dtype=np.float64).ravel()
    T = x.shape[1]
    if target.size != T:
        raise ValueError(f"target has {target.size} samples, input has {T}")
    if not 0 <= loss_start < T:
        raise ValueError(f"loss_start must be in [0, {T})")
    y, a_last, trace = _forward_trace(model, x)
    r = np.zeros(T)
    r[loss_start:] = y[loss_start:] - target[loss_start:]
    n = T - loss_start
    loss = float(np.sum(r[loss_start:] ** 2) / n)

    grads = {}

    def put(name, layer, dw, db):
        dv, dg = _weightnorm_backward(layer, dw)
        grads[f"{name}.v"], grads[f"{name}.g"], grads[f"{name}.bias"] = dv, dg, db

    dy = (2.0 / n) * r[None, :]
    d_a, dw, db = _conv_backward(a_last, model.head.weight(), dy)
    put("head", model.head, dw, db)
    for b in range(len(model.blocks) - 1, -1, -1):
        block = model.blocks[b]
        a_in, z = trace[b]
        dz = d_a * np.where(z >= 0, 1.0, model.slope)
        dx, dw, db = _conv_backward(a_in, block.conv.weight(), np.ascontiguousarray(dz))
        put(f"blocks.{b}.conv", block.conv, dw, db)
        if block.skip is None:
            dx = dx + d_a
        else:
            dxs, dws, dbs = _conv_backward(a_in, block.skip.weight(), np.ascontiguousarray(d_a))
            put(f"blocks.{b}.skip", block.skip, dws, dbs)
            dx = dx + dxs
        d_a = dx
    return loss, {name: grads[name] for name in model.parameters()}
