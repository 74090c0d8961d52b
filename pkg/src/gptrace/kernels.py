"""Backend selection for the hot kernels.

The compiled extension is used when importable; set ``GPTRACE_PURE_PYTHON=1``
to force the numpy fallback.
"""

import os

from . import _kernels_py

if os.environ.get("GPTRACE_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"

bilinear = _impl.bilinear
score_curves = _impl.score_curves
deposit = _impl.deposit
dijkstra = _impl.dijkstra

__all__ = ["BACKEND", "bilinear", "score_curves", "deposit", "dijkstra"]
