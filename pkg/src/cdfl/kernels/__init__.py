"""Hot kernels with a compiled backend and a pure numpy fallback.

The compiled extension is used when it was built and ``CDFL_KERNELS`` is not
set to ``python``. Results of the two backends agree to rounding error, not
bit-for-bit, so runs are only byte-reproducible on the same backend.
"""
from __future__ import annotations

import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

__all__ = ["BACKEND", "conv2d_forward", "conv2d_backward", "sq_dists", "available_backends", "get_backend"]


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _ckernels is not None else [])


def get_backend(name: str):
    """Return the kernel module for ``name`` ('python' or 'cython')."""
    if name == "python":
        return _pykernels
    if name == "cython":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


_requested = os.environ.get("CDFL_KERNELS", "").strip().lower()
if _requested == "python" or _ckernels is None:
    BACKEND = "python"
else:
    BACKEND = "cython"
_impl = get_backend(BACKEND)


def conv2d_forward(x: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return _impl.conv2d_forward(np.ascontiguousarray(x, dtype=np.float64),
                                np.ascontiguousarray(w, dtype=np.float64),
                                np.ascontiguousarray(bias, dtype=np.float64))


def conv2d_backward(x: np.ndarray, w: np.ndarray, gout: np.ndarray):
    return _impl.conv2d_backward(np.ascontiguousarray(x, dtype=np.float64),
                                 np.ascontiguousarray(w, dtype=np.float64),
                                 np.ascontiguousarray(gout, dtype=np.float64))


def sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return _impl.sq_dists(np.ascontiguousarray(points, dtype=np.float64),
                          np.ascontiguousarray(centers, dtype=np.float64))
