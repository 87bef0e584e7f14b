"""Mode-filter kernel selection: compiled extension when available,
numpy fallback otherwise. ``KERNEL_BACKEND`` records which one is active."""

from __future__ import annotations

import numpy as np

try:
    from tryondiff._kernels._modefilter import mode_filter_pass as _compiled_pass

    KERNEL_BACKEND = "cython"
except ImportError:  # extension not built
    _compiled_pass = None
    KERNEL_BACKEND = "python"

from tryondiff._kernels.modefilter_py import mode_filter_pass as _python_pass


def mode_filter_pass(labels: np.ndarray, relabel: np.ndarray, k: int) -> np.ndarray:
    labels = np.ascontiguousarray(labels, dtype=np.int32)
    relabel = np.ascontiguousarray(relabel, dtype=np.uint8)
    if _compiled_pass is not None:
        return np.asarray(_compiled_pass(labels, relabel, k))
    return _python_pass(labels, relabel, k)
