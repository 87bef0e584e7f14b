# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled mode-filter pass for boundary relabeling.

For every pixel flagged in ``relabel``, finds the most frequent non-zero
label in its k x k neighborhood (clipped at the borders). Ties break to
the lowest label id; a pixel with no non-zero neighbors keeps its label.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def mode_filter_pass(cnp.int32_t[:, :] labels, cnp.uint8_t[:, :] relabel, int k):
    cdef int H = labels.shape[0]
    cdef int W = labels.shape[1]
    cdef int r = k // 2
    cdef int y, x, ny, nx, lab, best, best_count, c
    cdef cnp.int32_t[:] counts = np.zeros(256, dtype=np.int32)
    out_arr = np.array(labels, dtype=np.int32, copy=True)
    cdef cnp.int32_t[:, :] out = out_arr
    for y in range(H):
        for x in range(W):
            if relabel[y, x] == 0:
                continue
            for c in range(256):
                counts[c] = 0
            for ny in range(max(0, y - r), min(H, y + r + 1)):
                for nx in range(max(0, x - r), min(W, x + r + 1)):
                    lab = labels[ny, nx]
                    if lab != 0:
                        counts[lab] += 1
            best = -1
            best_count = 0
            for c in range(256):
                if counts[c] > best_count:
                    best_count = counts[c]
                    best = c
            if best >= 0:
                out[y, x] = best
    return out_arr
