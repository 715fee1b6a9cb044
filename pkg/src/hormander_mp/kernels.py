"""Kernel selection: the compiled extension when importable, numpy otherwise.

Set ``HORMANDER_MP_PURE=1`` to force the numpy implementation.
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
flow_chain = _kernels_py.flow_chain
rk4_paths = _kernels_py.rk4_paths

if os.environ.get("HORMANDER_MP_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:  # extension not built
        _ckernels = None
    if _ckernels is not None:
        flow_chain = _ckernels.flow_chain
        rk4_paths = _ckernels.rk4_paths
        BACKEND = "cython"


def implementations():
    """Both backends side by side (compiled may be None), for tests and benchmarks."""
    try:
        from . import _ckernels as c
    except ImportError:
        c = None
    return {"python": _kernels_py, "cython": c}
