"""Kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``ATTIREGUARD_PURE_PYTHON=1`` before import to force the fallback.
``BACKEND`` names the implementation in use.
"""

from __future__ import annotations

import os

from . import _pykernels

pure = _pykernels

if os.environ.get("ATTIREGUARD_PURE_PYTHON", "") not in ("", "0"):
    compiled = None
else:
    try:
        from . import _ckernels as compiled
    except ImportError:  # extension not built
        compiled = None

_impl = compiled if compiled is not None else pure
BACKEND = "cython" if compiled is not None else "python"

decode_candidates = _impl.decode_candidates
greedy_nms = _impl.greedy_nms
clipped_centroid = _impl.clipped_centroid
