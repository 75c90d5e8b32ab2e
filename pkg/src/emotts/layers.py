"""Reusable neural blocks: dense, pre-net, GRU cell, highway, conv bank,
and the CBHG encoder whose final stage adds the bi-GRU output back onto its
input.

Every block works on 2-D tensors: sequences are (time, features) matrices
and recurrent steps take (1, features) rows.  Parameters are created from a
caller-supplied ``numpy.random.Generator`` in a fixed order, so a seeded
generator makes construction deterministic.  Weights use uniform
[-s, s] with s = sqrt(6 / (fan_in + fan_out)); biases start at zero unless
noted.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError


def uniform_init(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def zeros_row(dim: int) -> Tensor:
    return Tensor(np.zeros((1, dim)))


_ACTIVATIONS = {
    None: lambda t: t,
    "relu": Tensor.relu,
    "tanh": Tensor.tanh,
    "sigmoid": Tensor.sigmoid,
}


class Dense:
    """Affine map y = x @ weight + bias with an optional activation.

    The weight is stored (in_dim, out_dim) so row-major batches multiply
    directly.
    """

    def __init__(self, rng, in_dim: int, out_dim: int, activation: str | None = None,
                 bias_init: float = 0.0):
        if activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Tensor(uniform_init(rng, in_dim, out_dim, (in_dim, out_dim)),
                             requires_grad=True)
        self.bias = Tensor(np.full(out_dim, float(bias_init)), requires_grad=True)
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        return _ACTIVATIONS[self.activation](x @ self.weight + self.bias)

    def params(self, prefix: str):
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


class PreNet:
    """Two relu dense layers, each followed by dropout while training."""

    def __init__(self, rng, in_dim: int, dims=(64, 32), dropout: float = 0.5):
        self.fc1 = Dense(rng, in_dim, dims[0], activation="relu")
        self.fc2 = Dense(rng, dims[0], dims[1], activation="relu")
        self.dropout = dropout
        self.out_dim = dims[1]

    def __call__(self, x: Tensor, training: bool = False, seed=None) -> Tensor:
        h = self.fc1(x)
        if training:
            h = ad.dropout(h, self.dropout, (*seed, 0))
        h = self.fc2(h)
        if training:
            h = ad.dropout(h, self.dropout, (*seed, 1))
        return h

    def params(self, prefix: str):
        yield from self.fc1.params(f"{prefix}.fc1")
        yield from self.fc2.params(f"{prefix}.fc2")


def _gru_fwd(arrays, attrs):
    x, h, wz, uz, bz, wr, ur, br, wc, uc, bc = arrays
    if x.shape[1] != wz.shape[0] or h.shape[1] != uz.shape[0]:
        raise DimensionError(f"gru-cell: x {x.shape}, h {h.shape}, "
                             f"weights {wz.shape}/{uz.shape}")
    z = 0.5 * (np.tanh(0.5 * (x @ wz + h @ uz + bz)) + 1.0)
    r = 0.5 * (np.tanh(0.5 * (x @ wr + h @ ur + br)) + 1.0)
    gated = r * h
    c = np.tanh(x @ wc + gated @ uc + bc)
    out = h + z * (c - h)
    return out, (z, r, c, gated)


def _gru_bwd(g, arrays, saved, attrs):
    x, h, wz, uz, bz, wr, ur, br, wc, uc, bc = arrays
    z, r, c, gated = saved
    dz = g * (c - h) * z * (1.0 - z)
    dac = g * z * (1.0 - c * c)
    dh = g * (1.0 - z)
    dgated = dac @ uc.T
    dr = dgated * h * r * (1.0 - r)
    dh = dh + dgated * r
    dx = dac @ wc.T + dr @ wr.T + dz @ wz.T
    dh = dh + dr @ ur.T + dz @ uz.T
    return (dx, dh,
            x.T @ dz, h.T @ dz, dz.sum(axis=0),
            x.T @ dr, h.T @ dr, dr.sum(axis=0),
            x.T @ dac, gated.T @ dac, dac.sum(axis=0))


ad.register_primitive("gru-cell", _gru_fwd, _gru_bwd)


class GRUCell:
    """Gated recurrent unit.

    z = sigmoid(x Wz + h Uz + bz)
    r = sigmoid(x Wr + h Ur + br)
    c = tanh(x Wc + (r * h) Uc + bc)
    h' = (1 - z) * h + z * c

    The step runs as one fused kernel: a recurrent decode touches the cell
    hundreds of times per utterance, and per-primitive dispatch dominates at
    these feature sizes.
    """

    def __init__(self, rng, in_dim: int, hidden: int):
        self.in_dim = in_dim
        self.hidden = hidden

        def w():
            return Tensor(uniform_init(rng, in_dim, hidden, (in_dim, hidden)), requires_grad=True)

        def u():
            return Tensor(uniform_init(rng, hidden, hidden, (hidden, hidden)), requires_grad=True)

        def b():
            return Tensor(np.zeros(hidden), requires_grad=True)

        self.wz, self.uz, self.bz = w(), u(), b()
        self.wr, self.ur, self.br = w(), u(), b()
        self.wc, self.uc, self.bc = w(), u(), b()

    def step(self, x: Tensor, h_prev: Tensor) -> Tensor:
        if x.shape != (1, self.in_dim) or h_prev.shape != (1, self.hidden):
            raise DimensionError(
                f"gru: x {x.shape}, h {h_prev.shape}, expected (1, {self.in_dim})/(1, {self.hidden})")
        return ad.primitive_forward(
            "gru-cell", (x, h_prev, self.wz, self.uz, self.bz,
                         self.wr, self.ur, self.br, self.wc, self.uc, self.bc))

    def params(self, prefix: str):
        for gate, (w, u, b) in (("z", (self.wz, self.uz, self.bz)),
                                ("r", (self.wr, self.ur, self.br)),
                                ("c", (self.wc, self.uc, self.bc))):
            yield f"{prefix}.w{gate}", w
            yield f"{prefix}.u{gate}", u
            yield f"{prefix}.b{gate}", b


class Highway:
    """y = T(x) * H(x) + (1 - T(x)) * x; gate bias starts at -1 (carry-leaning)."""

    def __init__(self, rng, dim: int, gate_bias: float = -1.0):
        self.dim = dim
        self.transform = Dense(rng, dim, dim, activation="relu")
        self.gate = Dense(rng, dim, dim, activation="sigmoid", bias_init=gate_bias)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise DimensionError(f"highway: input {x.shape}, dim {self.dim}")
        t = self.gate(x)
        return t * self.transform(x) + (1.0 - t) * x

    def params(self, prefix: str):
        yield from self.transform.params(f"{prefix}.transform")
        yield from self.gate.params(f"{prefix}.gate")


class Conv1d:
    """Same-padded width-k convolution over (time, features) with bias."""

    def __init__(self, rng, in_dim: int, out_dim: int, width: int,
                 activation: str | None = None):
        self.width = width
        self.filters = Tensor(
            uniform_init(rng, width * in_dim, width * out_dim, (width, in_dim, out_dim)),
            requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        return _ACTIVATIONS[self.activation](ad.conv1d(x, self.filters) + self.bias)

    def params(self, prefix: str):
        yield f"{prefix}.filters", self.filters
        yield f"{prefix}.bias", self.bias


class Conv1dBank:
    """K parallel convolutions of widths 1..K, relu-activated and concatenated."""

    def __init__(self, rng, in_dim: int, bank_size: int = 8, channels: int = 32):
        self.convs = [Conv1d(rng, in_dim, channels, width, activation="relu")
                      for width in range(1, bank_size + 1)]
        self.out_dim = bank_size * channels

    def __call__(self, x: Tensor) -> Tensor:
        return ad.concat([conv(x) for conv in self.convs], axis=-1)

    def params(self, prefix: str):
        for k, conv in enumerate(self.convs, start=1):
            yield from conv.params(f"{prefix}.width{k}")


class BiGruResidual:
    """Bidirectional GRU whose concatenated states are added back onto the input.

    y_t = x_t + [forward_h_t ; backward_h_t], each direction sized dim/2 and
    started from a zero state, so the output keeps the input's feature size.
    Zeroed parameters make this block the exact identity.
    """

    def __init__(self, rng, dim: int):
        if dim % 2:
            raise ConfigError(f"bi-GRU residual needs an even feature dim, got {dim}")
        self.dim = dim
        self.forward_cell = GRUCell(rng, dim, dim // 2)
        self.backward_cell = GRUCell(rng, dim, dim // 2)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise DimensionError(f"bi-GRU residual: input {x.shape}, dim {self.dim}")
        steps = x.shape[0]
        rows = [x.slice(0, t, t + 1) for t in range(steps)]
        h = zeros_row(self.dim // 2)
        forward = []
        for t in range(steps):
            h = self.forward_cell.step(rows[t], h)
            forward.append(h)
        h = zeros_row(self.dim // 2)
        backward = [None] * steps
        for t in reversed(range(steps)):
            h = self.backward_cell.step(rows[t], h)
            backward[t] = h
        stacked = ad.concat(
            [ad.concat([f, b], axis=-1) for f, b in zip(forward, backward)], axis=0)
        return x + stacked

    def params(self, prefix: str):
        yield from self.forward_cell.params(f"{prefix}.forward")
        yield from self.backward_cell.params(f"{prefix}.backward")


class CBHG:
    """Conv bank -> maxpool(2, stride 1) -> two width-3 conv projections ->
    optional input residual -> highway stack -> residual bi-GRU.

    Shape-preserving: (time, dim) in, (time, dim) out.
    """

    def __init__(self, rng, dim: int, bank_size: int = 8, channels: int = 32,
                 highway_layers: int = 4, inner_residual: bool = True):
        self.dim = dim
        self.bank = Conv1dBank(rng, dim, bank_size, channels)
        self.proj1 = Conv1d(rng, self.bank.out_dim, dim, 3, activation="relu")
        self.proj2 = Conv1d(rng, dim, dim, 3, activation=None)
        self.highways = [Highway(rng, dim) for _ in range(highway_layers)]
        self.bigru = BiGruResidual(rng, dim)
        self.inner_residual = inner_residual

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise DimensionError(f"cbhg: input {x.shape}, expected (*, {self.dim})")
        y = self.bank(x)
        y = ad.maxpool1d(y, 2)
        y = self.proj1(y)
        y = self.proj2(y)
        if self.inner_residual:
            y = y + x
        for highway in self.highways:
            y = highway(y)
        return self.bigru(y)

    def params(self, prefix: str):
        yield from self.bank.params(f"{prefix}.bank")
        yield from self.proj1.params(f"{prefix}.proj1")
        yield from self.proj2.params(f"{prefix}.proj2")
        for i, highway in enumerate(self.highways):
            yield from highway.params(f"{prefix}.highway{i}")
        yield from self.bigru.params(f"{prefix}.bigru")
