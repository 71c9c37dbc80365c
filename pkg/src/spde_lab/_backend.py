"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the NumPy
implementation takes over. Set ``SPDE_LAB_PURE=1`` to force the fallback.
"""
import os

if os.environ.get("SPDE_LAB_PURE") == "1":
    from . import _kernels_py as kernels
else:
    try:
        from . import _kernels as kernels
    except ImportError:  # extension not built
        from . import _kernels_py as kernels

BACKEND = kernels.NAME

__all__ = ["kernels", "BACKEND"]
