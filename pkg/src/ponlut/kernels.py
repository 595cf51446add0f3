"""Backend selection for the hot loops.

The compiled extension is preferred; set ``PONLUT_PURE_PYTHON=1`` to force the
pure-Python fallback (useful for debugging and for cross-checking the two).
"""
from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("PONLUT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

prbs15_bits = _impl.prbs15_bits
feedback_precode = _impl.feedback_precode
gardner_loop = _impl.gardner_loop
lms_ffe_dfe = _impl.lms_ffe_dfe

__all__ = [
    "BACKEND",
    "prbs15_bits",
    "feedback_precode",
    "gardner_loop",
    "lms_ffe_dfe",
]
