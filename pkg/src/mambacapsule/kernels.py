"""Backend selection for the recurrence kernels.

The compiled extension is used when it imports; set
``MAMBACAPSULE_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

import numpy as np

from . import _scan_py

python_backend = _scan_py
try:
    from . import _scan_ext as compiled_backend
except ImportError:
    compiled_backend = None

if compiled_backend is not None and os.environ.get("MAMBACAPSULE_PURE_PYTHON", "") not in ("1", "true"):
    _impl, BACKEND = compiled_backend, "cython"
else:
    _impl, BACKEND = python_backend, "python"


def scan_forward(a, u, c):
    return _impl.scan_forward(np.ascontiguousarray(a), np.ascontiguousarray(u), np.ascontiguousarray(c))


def scan_backward(a, c, h, dy):
    return _impl.scan_backward(np.ascontiguousarray(a), np.ascontiguousarray(c),
                               np.ascontiguousarray(h), np.ascontiguousarray(dy))
