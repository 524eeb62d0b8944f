"""Hot-loop kernels, compiled when available.

The Cython extension ``airtemp._kernels`` is imported if it was built;
otherwise the numpy versions in ``airtemp._kernels_py`` are used.  Set
``AIRTEMP_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"

if os.environ.get("AIRTEMP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
else:
    _impl = _kernels_py

im2col3x3 = _impl.im2col3x3
col2im3x3 = _impl.col2im3x3
masked_l1 = _impl.masked_l1
select_ranks = _impl.select_ranks

__all__ = ["BACKEND", "im2col3x3", "col2im3x3", "masked_l1", "select_ranks"]
