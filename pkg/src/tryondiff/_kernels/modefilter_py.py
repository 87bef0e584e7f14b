"""Pure-numpy fallback for the mode-filter pass.

Mirrors the compiled kernel: one simultaneous relabeling pass where each
flagged pixel takes the most frequent non-zero label in its k x k
neighborhood, ties broken to the lowest id, pixels with no non-zero
neighbors left unchanged.
"""

from __future__ import annotations

import numpy as np


def mode_filter_pass(labels: np.ndarray, relabel: np.ndarray, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int32)
    h, w = labels.shape
    r = k // 2
    uniq = np.unique(labels)
    uniq = uniq[uniq != 0]
    if uniq.size == 0:
        return labels.copy()
    # counts[l, y, x] = occurrences of uniq[l] in the clipped neighborhood
    counts = np.zeros((uniq.size, h, w), dtype=np.int32)
    padded = np.full((h + 2 * r, w + 2 * r), -1, dtype=np.int32)
    padded[r : r + h, r : r + w] = labels
    for dy in range(k):
        for dx in range(k):
            window = padded[dy : dy + h, dx : dx + w]
            for li, lab in enumerate(uniq):
                counts[li] += window == lab
    best_idx = counts.argmax(axis=0)  # argmax takes the first (lowest) label on ties
    best_count = counts.max(axis=0)
    out = labels.copy()
    mask = (np.asarray(relabel, dtype=bool)) & (best_count > 0)
    out[mask] = uniq[best_idx[mask]]
    return out
