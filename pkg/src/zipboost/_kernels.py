"""Numba kernels for the hot paths: histogram accumulation, level-wise row
partitioning, and ensemble prediction.

Histogram sums use Kahan-Neumaier compensation so the per-bin totals are
insensitive to row order at working precision, which is what makes tree
structure reproducible under row shuffles.  Parallelism is across features
(disjoint output slices) or across rows (independent writes), so results are
deterministic regardless of thread count.
"""

import os

# the default TBB layer is version-sensitive and warns on selection; omp is
# deterministic here because no kernel reduces across threads (must be set
# before numba is imported)
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def accumulate_histograms(codes, row_slot, g, h, hist_g, hist_gc, hist_h, hist_hc, hist_n):
    """Add each row's (g, h) into its (slot, feature, bin) cell with compensation."""
    n_features, n_rows = codes.shape
    for f in prange(n_features):
        for i in range(n_rows):
            s = row_slot[i]
            if s < 0:
                continue
            b = codes[f, i]
            x = g[i]
            acc = hist_g[s, f, b]
            t = acc + x
            if abs(acc) >= abs(x):
                hist_gc[s, f, b] += (acc - t) + x
            else:
                hist_gc[s, f, b] += (x - t) + acc
            hist_g[s, f, b] = t
            x = h[i]
            acc = hist_h[s, f, b]
            t = acc + x
            if abs(acc) >= abs(x):
                hist_hc[s, f, b] += (acc - t) + x
            else:
                hist_hc[s, f, b] += (x - t) + acc
            hist_h[s, f, b] = t
            hist_n[s, f, b] += 1


@njit(cache=True, parallel=True)
def apply_pending_splits(codes, row_node, node_feature, node_threshold, node_left, node_right):
    """Descend every row one level through its node's freshly created split."""
    for i in prange(row_node.shape[0]):
        nd = row_node[i]
        f = node_feature[nd]
        if f >= 0:
            if codes[f, i] <= node_threshold[nd]:
                row_node[i] = node_left[nd]
            else:
                row_node[i] = node_right[nd]


@njit(cache=True, parallel=True)
def predict_ensemble(row_codes, roots, feature, threshold, left, right, value, out):
    """Sum of leaf values over all trees for every row (learning rate applied
    by the caller).

    Codes are row-major, shape (n_rows, n_features).  Rows are processed in
    blocks with trees in the outer loop so one tree's node arrays stay
    cache-resident across the whole block; per row the accumulation order
    over trees is fixed, so output is deterministic under any thread count.
    """
    n_rows = row_codes.shape[0]
    n_trees = roots.shape[0]
    block = 2048
    n_blocks = (n_rows + block - 1) // block
    for blk in prange(n_blocks):
        lo = blk * block
        hi = min(n_rows, lo + block)
        for t in range(n_trees):
            root = roots[t]
            for i in range(lo, hi):
                nd = root
                f = feature[nd]
                while f >= 0:
                    if row_codes[i, f] <= threshold[nd]:
                        nd = left[nd]
                    else:
                        nd = right[nd]
                    f = feature[nd]
                out[i] += value[nd]


def warm_up():
    """Trigger JIT compilation of all kernels on tiny inputs."""
    codes = np.zeros((1, 2), dtype=np.uint16)
    codes[0, 1] = 1
    row_slot = np.zeros(2, dtype=np.int32)
    g = np.asarray([1.0, -1.0])
    h = np.asarray([1.0, 1.0])
    z = np.zeros((1, 1, 2), dtype=np.float64)
    accumulate_histograms(codes, row_slot, g, h, z.copy(), z.copy(), z.copy(), z.copy(),
                          np.zeros((1, 1, 2), dtype=np.int64))
    feature = np.asarray([0, -1, -1], dtype=np.int32)
    threshold = np.asarray([0, 0, 0], dtype=np.int32)
    left = np.asarray([1, -1, -1], dtype=np.int32)
    right = np.asarray([2, -1, -1], dtype=np.int32)
    value = np.asarray([0.0, 1.0, -1.0])
    apply_pending_splits(codes, np.zeros(2, dtype=np.int32), feature, threshold, left, right)
    out = np.zeros(2, dtype=np.float64)
    predict_ensemble(np.ascontiguousarray(codes.T), np.zeros(1, dtype=np.int64),
                     feature, threshold, left, right, value, out)
