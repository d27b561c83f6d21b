"""Hot kernels, compiled when possible.

The Cython extension ``te2sl._ext.kernels`` is preferred; the pure-Python
module is the fallback. Set ``TE2SL_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py as python_kernels

compiled_kernels = None
if os.environ.get("TE2SL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._ext import kernels as compiled_kernels  # type: ignore[no-redef]
    except ImportError:
        compiled_kernels = None

_impl = compiled_kernels if compiled_kernels is not None else python_kernels
BACKEND = "cython" if compiled_kernels is not None else "python"

fnv1a64 = _impl.fnv1a64
edit_counts = _impl.edit_counts
