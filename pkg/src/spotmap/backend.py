"""Kernel backend selection.

The hot numerical kernels exist twice: a compiled Cython extension
(``spotmap._kernels``) and a pure NumPy fallback (``spotmap._kernels_py``).
The compiled module is preferred when importable; set the environment
variable ``SPOTMAP_PURE_PYTHON=1`` to force the fallback (useful for the
backend benchmark and for debugging).
"""

from __future__ import annotations

import os

if os.environ.get("SPOTMAP_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as kernels

    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as kernels

        BACKEND = "python"


def backend_name() -> str:
    """Name of the active kernel backend ("cython" or "python")."""
    return BACKEND
