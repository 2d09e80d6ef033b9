"""Kernel backend selection.

The compiled extension is preferred; set ``SKELGEN_PURE_PYTHON=1`` to force
the numpy fallback (useful for benchmarking and cross-checking).
"""
import os

from . import _pykernels

if os.environ.get("SKELGEN_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = _impl.BACKEND
unfold3d = _impl.unfold3d
fold3d = _impl.fold3d
leaky_relu_forward = _impl.leaky_relu_forward
leaky_relu_backward = _impl.leaky_relu_backward
out_extent = _pykernels.out_extent
