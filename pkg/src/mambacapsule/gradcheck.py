"""Central finite-difference gradient checking against the tape."""
from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor


def numeric_grad(f, t: Tensor, eps: float = 1e-5) -> np.ndarray:
    """d f() / d t by central differences; f returns a scalar Tensor and reads t.data."""
    g = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f().item()
        flat[i] = old - eps
        lo = f().item()
        flat[i] = old
        gf[i] = (hi - lo) / (2.0 * eps)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """|a - n| / max(|a|, |n|) in the 2-norm; 0 when both vanish."""
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    return 0.0 if den == 0 else float(np.linalg.norm(analytic - numeric) / den)


def check(f, tensors, eps: float = 1e-5) -> dict:
    """Worst relative error per input tensor, keyed by position (or ``name`` when set)."""
    with Tape() as tape:
        loss = f()
    tape.backward(loss, accumulate=False)
    errors = {}
    for i, t in enumerate(tensors):
        errors[t.name or i] = relative_error(tape.grad_of(t), numeric_grad(f, t, eps))
    return errors
