"""Attention mechanisms for the decoder.

Soft attention scores every encoder position with a content-based tanh
energy and normalizes by softmax.  Monotonic attention turns the same
energy form into per-position selection probabilities; training uses the
expected alignment computed by a stabilized left-to-right recurrence
(division-free), inference thresholds the probabilities and walks strictly
left to right.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError
from .layers import Dense, uniform_init


def _monotonic_align_fwd(arrays, attrs):
    p, prev = arrays
    if p.shape != prev.shape or p.ndim != 2 or p.shape[0] != 1:
        raise DimensionError(f"monotonic-align: p {p.shape}, prev {prev.shape}")
    n = p.shape[1]
    q = np.empty(n)
    q[0] = prev[0, 0]
    for j in range(1, n):
        q[j] = (1.0 - p[0, j - 1]) * q[j - 1] + prev[0, j]
    return (p[0] * q)[None, :], q


def _monotonic_align_bwd(g, arrays, q, attrs):
    p, prev = arrays
    n = p.shape[1]
    grad_p = g[0] * q
    grad_prev = np.zeros(n)
    grad_q = g[0] * p[0]
    for j in range(n - 1, 0, -1):
        grad_prev[j] += grad_q[j]
        grad_q[j - 1] += grad_q[j] * (1.0 - p[0, j - 1])
        grad_p[j - 1] -= grad_q[j] * q[j - 1]
    grad_prev[0] += grad_q[0]
    return grad_p[None, :], grad_prev[None, :]


ad.register_primitive("monotonic-align", _monotonic_align_fwd, _monotonic_align_bwd)


def monotonic_expected_alignment(p_row: Tensor, alpha_prev: Tensor) -> Tensor:
    """Expected alignment row given selection probabilities and the previous row.

    alpha_j = p_j * q_j with q_j = (1 - p_{j-1}) * q_{j-1} + alpha_prev_j and
    q_0 = alpha_prev_0.  Probability mass that scans past the last position
    is dropped, so rows sum to at most 1.  Prime the first decoder step with
    alpha_prev = [1, 0, ..., 0].
    """
    return ad.primitive_forward("monotonic-align", (p_row, alpha_prev))


def initial_alignment(enc_steps: int) -> Tensor:
    row = np.zeros((1, enc_steps))
    row[0, 0] = 1.0
    return Tensor(row)


def monotonic_hard_step(p_row: np.ndarray, prev_pos: int) -> tuple[int, np.ndarray]:
    """Pick the first position >= prev_pos whose probability reaches 0.5.

    Returns (position, one-hot row); when no position qualifies the scan has
    run off the end: position == len(p_row) and the row is all zero.
    """
    n = len(p_row)
    if not 0 <= prev_pos <= n:
        raise ContractError(f"monotonic_hard_step: prev_pos {prev_pos} outside [0, {n}]")
    alpha = np.zeros(n)
    for j in range(prev_pos, n):
        if p_row[j] >= 0.5:
            alpha[j] = 1.0
            return j, alpha
    return n, alpha


class SoftAttention:
    """alpha = softmax_j(v . tanh(W h + V m_j)); context = sum_j alpha_j m_j."""

    def __init__(self, rng, query_dim: int, memory_dim: int, attention_dim: int):
        self.query_proj = Dense(rng, query_dim, attention_dim)
        self.memory_proj = Dense(rng, memory_dim, attention_dim)
        self.score = Tensor(uniform_init(rng, attention_dim, 1, (attention_dim, 1)),
                            requires_grad=True)

    def project_memory(self, memory: Tensor) -> Tensor:
        if memory.shape[0] == 0:
            raise ContractError("attention: empty memory")
        return self.memory_proj(memory)

    def step(self, h_att: Tensor, memory: Tensor, memory_proj: Tensor) -> tuple[Tensor, Tensor]:
        energies = (memory_proj + self.query_proj(h_att)).tanh() @ self.score
        alpha = energies.reshape(1, memory.shape[0]).softmax()
        return alpha, alpha @ memory

    def params(self, prefix: str):
        yield from self.query_proj.params(f"{prefix}.query")
        yield from self.memory_proj.params(f"{prefix}.memory")
        yield f"{prefix}.score", self.score


class MonotonicAttention:
    """Selection probabilities p_j = sigmoid(energy_j + noise) over encoder positions.

    The energy uses the same tanh form as soft attention with its own
    parameters; the scalar energy bias starts at -1 to favour staying on the
    current position.  Pre-sigmoid Gaussian noise (scale ``noise_scale``)
    applies only while training, pushing probabilities toward 0/1.
    """

    def __init__(self, rng, query_dim: int, memory_dim: int, attention_dim: int,
                 noise_scale: float = 1.0, energy_bias: float = -1.0):
        self.query_proj = Dense(rng, query_dim, attention_dim)
        self.memory_proj = Dense(rng, memory_dim, attention_dim)
        self.score = Tensor(uniform_init(rng, attention_dim, 1, (attention_dim, 1)),
                            requires_grad=True)
        self.bias = Tensor(np.full(1, float(energy_bias)), requires_grad=True)
        self.noise_scale = noise_scale

    def project_memory(self, memory: Tensor) -> Tensor:
        if memory.shape[0] == 0:
            raise ContractError("attention: empty memory")
        return self.memory_proj(memory)

    def select_probs(self, h_att: Tensor, memory_proj: Tensor,
                     training: bool = False, seed=None) -> Tensor:
        energies = (memory_proj + self.query_proj(h_att)).tanh() @ self.score + self.bias
        energies = energies.reshape(1, memory_proj.shape[0])
        if training and self.noise_scale > 0:
            noise = np.random.default_rng(list(seed)).standard_normal(energies.shape)
            energies = energies + Tensor(self.noise_scale * noise)
        return energies.sigmoid()

    def params(self, prefix: str):
        yield from self.query_proj.params(f"{prefix}.query")
        yield from self.memory_proj.params(f"{prefix}.memory")
        yield f"{prefix}.score", self.score
        yield f"{prefix}.bias", self.bias
