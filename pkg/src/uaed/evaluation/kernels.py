"""Kernel backend selection: the compiled extension when importable, else pure Python.

Set ``UAED_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("UAED_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

backend = _compiled if _compiled is not None else _kernels_py
BACKEND_NAME = "compiled" if _compiled is not None else "python"

candidate_pairs = backend.candidate_pairs
greedy_assign = backend.greedy_assign
augment = backend.augment
nms_suppress = backend.nms_suppress
