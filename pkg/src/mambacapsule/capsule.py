"""Primary capsules, learned vote transforms, and routing-by-agreement."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .module import Module, param
from .tensor import Tensor, l2norm, matmul, primitive, softmax

SQUASH_EPS = 1e-12


def squash(s: Tensor, axis: int = -1) -> Tensor:
    """v = |s|^2 / (1 + |s|^2) * s / |s|; vectors shorter than 1e-12 map to 0."""
    if axis != -1:
        raise ValueError("squash works on the trailing axis")
    sd = s.data
    n2 = (sd * sd).sum(axis=-1, keepdims=True)
    n = np.sqrt(n2)
    live = n >= SQUASH_EPS
    f = np.where(live, n / (1.0 + n2), 0.0)
    out = sd * f

    def backward(g):
        # d/ds [f(|s|) s] = f I + f'(|s|) s s^T / |s|
        safe = np.where(live, n, 1.0)
        fprime_over_n = np.where(live, (1.0 - n2) / (1.0 + n2) ** 2 / safe, 0.0)
        return (f * g + sd * fprime_over_n * (sd * g).sum(axis=-1, keepdims=True),)
    return primitive("squash", out, (s,), backward)


@dataclass
class PrimaryCapsules:
    capsules: Tensor  # (B, P, D_p)


@dataclass
class CapsuleOutput:
    capsules: Tensor  # (B, K, D_hat)
    norms: Tensor  # (B, K)
    coefficients: list = field(default_factory=list)  # per iteration, (B, P, K) arrays

    def predictions(self) -> np.ndarray:
        # np.argmax returns the first maximum, so ties go to the lowest class index
        return np.argmax(self.norms.data, axis=1)


def form_primary_capsules(features: Tensor, stride: int, primary_dim: int) -> PrimaryCapsules:
    b, l, d = features.shape
    if l % stride:
        raise ConfigError(f"sequence length {l} is not divisible by pooling stride {stride}")
    pooled = features.reshape(b, l // stride, stride, d).mean(axis=2)
    flat = (l // stride) * d
    if flat % primary_dim:
        raise ConfigError(f"pooled size {flat} is not a multiple of capsule dim {primary_dim}")
    caps = pooled.reshape(b, flat // primary_dim, primary_dim)
    return PrimaryCapsules(squash(caps))


def predict_votes(u: PrimaryCapsules | Tensor, W: Tensor) -> Tensor:
    """u (B, P, D_p), W (P, K, D_hat, D_p) -> votes (B, P, K, D_hat)."""
    caps = u.capsules if isinstance(u, PrimaryCapsules) else u
    b, p, dp = caps.shape
    if W.ndim != 4 or W.shape[0] != p or W.shape[3] != dp:
        raise DimensionError(f"vote transforms {W.shape} do not fit capsules {caps.shape}")
    k, dh = W.shape[1], W.shape[2]
    return matmul(W, caps.reshape(b, p, 1, dp, 1)).reshape(b, p, k, dh)


def dynamic_routing(votes: Tensor, iterations: int) -> CapsuleOutput:
    """Routing by agreement; gradients flow through every iteration."""
    if iterations < 1:
        raise ConfigError(f"routing iterations must be >= 1, got {iterations}")
    b, p, k, dh = votes.shape
    logits = Tensor(np.zeros((b, p, k)))
    history = []
    v = None
    for it in range(iterations):
        c = softmax(logits, axis=2)
        history.append(c.data)
        s = (c.reshape(b, p, k, 1) * votes).sum(axis=1)
        v = squash(s)
        if it < iterations - 1:
            logits = logits + (v.reshape(b, 1, k, dh) * votes).sum(axis=3)
    return CapsuleOutput(v, l2norm(v, axis=-1), history)


class CapsuleDecoder(Module):
    def __init__(self, cfg, rng: np.random.Generator):
        self.stride = cfg.pool_stride
        self.primary_dim = cfg.primary_dim
        self.iterations = cfg.routing_iters
        p = cfg.n_primary
        self.W = param(rng.normal(0.0, cfg.primary_dim ** -0.5,
                                  (p, cfg.n_classes, cfg.class_dim, cfg.primary_dim)))

    def __call__(self, features: Tensor) -> CapsuleOutput:
        u = form_primary_capsules(features, self.stride, self.primary_dim)
        return dynamic_routing(predict_votes(u, self.W), self.iterations)


def classify(features: Tensor, decoder: CapsuleDecoder) -> CapsuleOutput:
    return decoder(features)
