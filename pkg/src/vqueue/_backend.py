"""Kernel backend selection.

The compiled extension is used when importable; set ``VQUEUE_PURE_PYTHON=1``
to force the pure-Python twin. Both expose the same functions.
"""
from __future__ import annotations

import os

from . import _pykernels

python_kernels = _pykernels

try:
    from . import _kernels as compiled_kernels
except ImportError:  # extension not built
    compiled_kernels = None

if compiled_kernels is not None and os.environ.get("VQUEUE_PURE_PYTHON", "") in ("", "0"):
    kernels = compiled_kernels
    BACKEND = "compiled"
else:
    kernels = _pykernels
    BACKEND = "python"
