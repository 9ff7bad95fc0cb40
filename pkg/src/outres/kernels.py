"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the NumPy
fallback. Set ``OUTRES_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("OUTRES_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        pass

knn_with_ties = _impl.knn_with_ties
lof_scores = _impl.lof_scores
nearest_centroid = _impl.nearest_centroid

__all__ = ["BACKEND", "knn_with_ties", "lof_scores", "nearest_centroid"]
