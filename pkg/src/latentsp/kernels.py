"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``LATENTSP_PURE`` is set to a non-empty value other
than ``0``, the numpy implementation is used.  ``BACKEND`` names the choice.
"""
from __future__ import annotations

import os

from . import _kernels_py as pure

compiled = None
if os.environ.get("LATENTSP_PURE", "0") in ("", "0"):
    try:
        from . import _kernels as compiled  # type: ignore[no-redef]
    except ImportError:  # pragma: no cover - depends on build
        compiled = None

active = compiled if compiled is not None else pure
BACKEND = "compiled" if compiled is not None else "pure"

sweep = active.sweep
dual_value = active.dual_value
beliefs = active.beliefs
marginal_residual = active.marginal_residual

__all__ = ["BACKEND", "active", "beliefs", "compiled", "dual_value",
           "marginal_residual", "pure", "sweep"]
