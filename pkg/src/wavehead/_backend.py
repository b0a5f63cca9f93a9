"""Kernel backend selection.

The compiled extension is preferred; set ``WAVEHEAD_PURE_PYTHON=1`` to force
the numpy fallback.
"""

import os

from . import _pykernels

if os.environ.get("WAVEHEAD_PURE_PYTHON", "") not in ("", "0"):
    kernels = _pykernels
else:
    try:
        from . import _ckernels as kernels
    except ImportError:  # extension not built
        kernels = _pykernels

BACKEND = "compiled" if kernels is not _pykernels else "python"
