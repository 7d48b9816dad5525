# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the diagonal linear recurrence; same contract as _scan_py.

Loops run time-outermost so every inner pass walks a contiguous (D, N) slab.
"""
import numpy as np
cimport cython


def scan_forward(const double[:, :, :, ::1] a, const double[:, :, :, ::1] u,
                 const double[:, :, ::1] c):
    cdef Py_ssize_t B = a.shape[0], L = a.shape[1], D = a.shape[2], N = a.shape[3]
    cdef Py_ssize_t b, t, d, n
    cdef double v, acc
    h_arr = np.empty((B, L, D, N))
    y_arr = np.empty((B, L, D))
    cdef double[:, :, :, ::1] h = h_arr
    cdef double[:, :, ::1] y = y_arr
    with nogil:
        for b in range(B):
            for t in range(L):
                for d in range(D):
                    acc = 0.0
                    for n in range(N):
                        if t > 0:
                            v = a[b, t, d, n] * h[b, t - 1, d, n] + u[b, t, d, n]
                        else:
                            v = u[b, t, d, n]
                        h[b, t, d, n] = v
                        acc = acc + c[b, t, n] * v
                    y[b, t, d] = acc
    return y_arr, h_arr


def scan_backward(const double[:, :, :, ::1] a, const double[:, :, ::1] c,
                  const double[:, :, :, ::1] h, const double[:, :, ::1] dy):
    cdef Py_ssize_t B = a.shape[0], L = a.shape[1], D = a.shape[2], N = a.shape[3]
    cdef Py_ssize_t b, t, d, n
    cdef double dh, g
    da_arr = np.empty((B, L, D, N))
    du_arr = np.empty((B, L, D, N))
    dc_arr = np.zeros((B, L, N))
    cdef double[:, :, :, ::1] da = da_arr
    cdef double[:, :, :, ::1] du = du_arr
    cdef double[:, :, ::1] dc = dc_arr
    with nogil:
        for b in range(B):
            for t in range(L - 1, -1, -1):
                for d in range(D):
                    g = dy[b, t, d]
                    for n in range(N):
                        dh = g * c[b, t, n]
                        if t < L - 1:
                            dh = dh + a[b, t + 1, d, n] * du[b, t + 1, d, n]
                        du[b, t, d, n] = dh
                        if t > 0:
                            da[b, t, d, n] = dh * h[b, t - 1, d, n]
                        else:
                            da[b, t, d, n] = 0.0
                        dc[b, t, n] = dc[b, t, n] + g * h[b, t, d, n]
    return da_arr, du_arr, dc_arr
