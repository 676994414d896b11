"""Backend dispatch for the hot tracking kernels.

``THERMORESP_BACKEND=numpy`` forces the pure-numpy fallback,
``=numba`` requires the compiled backend, unset (or ``auto``) prefers
numba and silently falls back when it cannot be imported. The choice is
made once at import time; ``benchmarks/bench_backends.py`` compares the
two implementations directly.
"""

from __future__ import annotations

import os

_requested = os.environ.get("THERMORESP_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"THERMORESP_BACKEND={_requested!r} not understood; use 'numba' or 'numpy'"
    )

if _requested == "numpy":
    from thermoresp.kernels import numpy_impl as _impl

    BACKEND = "numpy"
else:
    try:
        from thermoresp.kernels import numba_impl as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        from thermoresp.kernels import numpy_impl as _impl

        BACKEND = "numpy"

lk_refine_level = _impl.lk_refine_level
ncc_search = _impl.ncc_search

__all__ = ["BACKEND", "lk_refine_level", "ncc_search"]
