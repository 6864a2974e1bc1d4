"""Kernel backend selection.

The compiled extension is used when importable; setting
``VOTRI_PURE_PYTHON=1`` forces the numpy fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("VOTRI_PURE_PYTHON", "") not in ("", "0"):
    kernels = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        kernels = _kernels_py
        BACKEND = "python"


def available_backends() -> dict:
    """Map of backend name to kernel module for every importable backend."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels  # type: ignore[attr-defined]

        out["cython"] = _kernels
    except ImportError:
        pass
    return out
