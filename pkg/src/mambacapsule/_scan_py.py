"""Reference numpy kernels for the diagonal linear recurrence.

    h[t] = a[t] * h[t-1] + u[t],  h[-1] = 0
    y[t, d] = sum_n c[t, n] * h[t, d, n]

Arrays: a, u, h are (B, L, D, N); c is (B, L, N); y and dy are (B, L, D).
The loop runs over L and is vectorised over (B, D, N).
"""
import numpy as np


def scan_forward(a, u, c):
    B, L, D, N = a.shape
    h = np.empty((B, L, D, N))
    prev = np.zeros((B, D, N))
    for t in range(L):
        prev = a[:, t] * prev + u[:, t]
        h[:, t] = prev
    y = np.einsum("bldn,bln->bld", h, c)
    return y, h


def scan_backward(a, c, h, dy):
    B, L, D, N = a.shape
    da = np.empty((B, L, D, N))
    du = np.empty((B, L, D, N))
    carry = np.zeros((B, D, N))
    for t in range(L - 1, -1, -1):
        dh = dy[:, t, :, None] * c[:, t, None, :] + carry
        du[:, t] = dh
        if t > 0:
            da[:, t] = dh * h[:, t - 1]
        else:
            da[:, t] = 0.0
        carry = a[:, t] * dh
    dc = np.einsum("bld,bldn->bln", dy, h)
    return da, du, dc
