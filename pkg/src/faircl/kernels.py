"""Backend selection for the hot kernels.

The compiled extension is preferred. Setting ``FAIRCL_PURE_PYTHON=1``
before import forces the numpy/pure-Python implementations.
"""
from __future__ import annotations

import os

from faircl import _pykernels

try:
    if os.environ.get("FAIRCL_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python backend requested")
    from faircl import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

ctc_forward_backward = _impl.ctc_forward_backward
edit_ops = _impl.edit_ops

__all__ = ["BACKEND", "ctc_forward_backward", "edit_ops"]
