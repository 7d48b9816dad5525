"""Selective state-space encoder with multi-branch fusion blocks."""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError, NumericError
from .module import Module, param
from .tensor import (Tensor, concat, conv1d, dropout, exp, layer_norm, matmul, mul, neg,
                     primitive, softplus)

# below this |z| the (e^z - 1)/z value switches to its Taylor series
SERIES_CUTOFF = 1e-6
_DERIV_CUTOFF = 1e-4


def phi1(z: Tensor) -> Tensor:
    """(e^z - 1) / z, continuous through z = 0."""
    zd = z.data
    small = np.abs(zd) < SERIES_CUTOFF
    safe = np.where(small, 1.0, zd)
    val = np.where(small, 1.0 + zd / 2.0 + zd * zd / 6.0, np.expm1(safe) / safe)

    def backward(g):
        dsmall = np.abs(zd) < _DERIV_CUTOFF
        s = np.where(dsmall, 1.0, zd)
        d = np.where(dsmall, 0.5 + zd / 3.0 + zd * zd / 8.0,
                     (s * np.exp(s) - np.expm1(s)) / (s * s))
        return (g * d,)
    return primitive("phi1", val, (z,), backward)


def discretize(A: Tensor, B_t: Tensor, delta: Tensor) -> tuple[Tensor, Tensor]:
    """Zero-order hold for a diagonal state matrix.

    A (D, N), B_t (B, L, N), delta (B, L, D) -> Abar, Bbar each (B, L, D, N),
    with Abar = exp(delta*A) and Bbar = (delta*A)^-1 (exp(delta*A) - 1) * delta * B.
    """
    if not np.all((delta.data > 0) & np.isfinite(delta.data)):
        raise NumericError("discretize: step sizes must be finite and strictly positive")
    b, l, d = delta.shape
    n = A.shape[1]
    if A.shape != (d, n) or B_t.shape != (b, l, n):
        raise DimensionError(f"discretize: A {A.shape}, B {B_t.shape}, delta {delta.shape} disagree")
    dt = delta.reshape(b, l, d, 1)
    z = mul(dt, A)
    abar = exp(z)
    bbar = phi1(z) * dt * B_t.reshape(b, l, 1, n)
    return abar, bbar


def scan(abar: Tensor, u: Tensor, c: Tensor) -> Tensor:
    """h_t = abar_t * h_{t-1} + u_t (h_0 = 0), y_t[d] = <c_t, h_t[d]>."""
    y, h = kernels.scan_forward(abar.data, u.data, c.data)

    def backward(g):
        return kernels.scan_backward(abar.data, c.data, h, g)
    return primitive("selective_scan", y, (abar, u, c), backward)


def inverse_softplus(y):
    return y + np.log(-np.expm1(-y))


class SsmBranch(Module):
    """One input-selective SSM: projections for B, C and the step size, plus its own conv."""

    def __init__(self, dim: int, n_state: int, conv_width: int, delta_range: tuple[float, float],
                 rng: np.random.Generator):
        if conv_width < 1 or conv_width % 2 == 0:
            raise ConfigError(f"branch conv width must be odd and >= 1, got {conv_width}")
        bound = 1.0 / np.sqrt(conv_width)
        self.conv = param(rng.uniform(-bound, bound, (conv_width, dim)))
        # log(-A); A[d, n] = -(n + 1)
        self.A_log = param(np.log(np.tile(np.arange(1, n_state + 1, dtype=np.float64), (dim, 1))))
        self.W_B = param(rng.normal(0.0, dim ** -0.5, (dim, n_state)))
        self.W_C = param(rng.normal(0.0, dim ** -0.5, (dim, n_state)))
        self.W_delta = param(rng.normal(0.0, 0.1 * dim ** -0.5, (dim, dim)))
        self.delta_bias = param(inverse_softplus(rng.uniform(*delta_range, dim)))
        self.conv_width = conv_width
        self.delta_range = delta_range

    @property
    def A(self) -> Tensor:
        return neg(exp(self.A_log))


def selective_scan(x: Tensor, br: SsmBranch) -> Tensor:
    """x (B, L, D) -> y (B, L, D) through the branch's input-dependent recurrence."""
    b, l, d = x.shape
    delta = softplus(matmul(x, br.W_delta) + br.delta_bias)
    B_t = matmul(x, br.W_B)
    C_t = matmul(x, br.W_C)
    abar, bbar = discretize(br.A, B_t, delta)
    return scan(abar, bbar * x.reshape(b, l, d, 1), C_t)


class FusionBlock(Module):
    """Shared conv, m SSM branches at different time scales, concat, residual, layer norm."""

    def __init__(self, dim: int, n_state: int, n_branches: int, conv_width: int,
                 rng: np.random.Generator):
        if dim % n_branches:
            raise ConfigError(f"n_branches={n_branches} must divide dim={dim}")
        bound = 1.0 / np.sqrt(conv_width)
        self.conv = param(rng.uniform(-bound, bound, (conv_width, dim)))
        self.branches = [
            SsmBranch(dim, n_state, 2 * j + 1, (0.001 * 4 ** j, 0.1 * 4 ** j), rng)
            for j in range(n_branches)
        ]
        out = dim // n_branches
        self.down = [param(rng.normal(0.0, dim ** -0.5, (dim, out))) for _ in range(n_branches)]
        self.gamma = param(np.ones(dim))
        self.beta = param(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        xhat = conv1d(x, self.conv)
        parts = [matmul(selective_scan(conv1d(xhat, br.conv), br), w)
                 for br, w in zip(self.branches, self.down)]
        return layer_norm(concat(parts, axis=-1) + x, self.gamma, self.beta)


class Encoder(Module):
    def __init__(self, cfg, rng: np.random.Generator):
        self.seq_len = cfg.seq_len
        self.rate = cfg.dropout
        self.up_w = param(rng.normal(0.0, 1.0, cfg.dim))
        self.up_b = param(np.zeros(cfg.dim))
        self.blocks = [FusionBlock(cfg.dim, cfg.n_state, cfg.n_branches, cfg.conv_width, rng)
                       for _ in range(cfg.n_layers)]

    def __call__(self, x: Tensor, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.seq_len:
            raise DimensionError(f"encoder expects input (batch, {self.seq_len}), got {x.shape}")
        b, l = x.shape
        h = x.reshape(b, l, 1) * self.up_w + self.up_b
        h = dropout(h, self.rate, rng, training)
        for block in self.blocks:
            h = dropout(block(h), self.rate, rng, training)
        return h


def encode(x, encoder: Encoder, training: bool = False, rng=None) -> Tensor:
    return encoder(x if isinstance(x, Tensor) else Tensor(x), training, rng)
