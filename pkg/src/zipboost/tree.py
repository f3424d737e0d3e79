"""Level-wise regression trees on gradient/Hessian statistics.

A tree is grown breadth-first: at every depth all expandable nodes accumulate
per-feature histograms of (sum g, sum h) in one pass over the rows, then each
node takes the split maximizing the L2-regularized second-order gain

    0.5 * (G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - (G_L+G_R)^2/(H_L+H_R+lam))

over all (feature, bin-threshold) candidates.  Rows with code <= threshold go
left.  Node values are -G/(H+lam); every node (not just leaves) records its
value and row count so explanation statistics can be computed on serialized
models without data access.

Ties in gain resolve to the lowest feature index, then the lowest bin, making
training deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import accumulate_histograms, apply_pending_splits
from .errors import FitError


@dataclass
class Tree:
    """Flat node arrays; feature < 0 marks a leaf."""

    feature: np.ndarray     # int32, split feature index or -1
    threshold: np.ndarray   # int32, bin threshold (codes <= threshold go left)
    left: np.ndarray        # int32 child ids
    right: np.ndarray
    value: np.ndarray       # float64, -G/(H+lam) of the node's training rows
    count: np.ndarray       # int64, training rows through the node

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "count": self.count.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int32),
            threshold=np.asarray(d["threshold"], dtype=np.int32),
            left=np.asarray(d["left"], dtype=np.int32),
            right=np.asarray(d["right"], dtype=np.int32),
            value=np.asarray(d["value"], dtype=np.float64),
            count=np.asarray(d["count"], dtype=np.int64),
        )


def grow_tree(codes: np.ndarray, bin_counts: np.ndarray, g: np.ndarray, h: np.ndarray,
              l2_penalty: float, max_depth: int,
              min_child_hessian: float = 1e-3) -> tuple[Tree, np.ndarray]:
    """Grow one tree; returns (tree, leaf id per row).

    codes is the feature-major uint16 bin matrix, g/h the per-row gradient and
    (positive) Hessian.  Nodes where no candidate split has strictly positive
    gain become leaves.
    """
    n_features, n_rows = codes.shape
    if n_rows == 0:
        raise FitError("cannot grow a tree on empty input")
    if l2_penalty < 0:
        raise FitError("l2_penalty must be nonnegative")
    g = np.ascontiguousarray(g, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    max_bins = int(bin_counts.max())

    feature = [np.int32(-1)]
    threshold = [np.int32(-1)]
    left = [np.int32(-1)]
    right = [np.int32(-1)]
    node_G = [0.0]
    node_H = [0.0]
    node_count = [n_rows]
    node_value = [0.0]

    row_node = np.zeros(n_rows, dtype=np.int32)
    level_nodes = [0]
    # valid threshold positions per feature: t in [0, bin_count - 2]
    thr_valid = np.zeros((n_features, max_bins - 1), dtype=bool) if max_bins > 1 else \
        np.zeros((n_features, 0), dtype=bool)
    for f in range(n_features):
        thr_valid[f, : bin_counts[f] - 1] = True

    for depth in range(max_depth):
        expandable = [nd for nd in level_nodes if node_count[nd] >= 2]
        if not expandable or max_bins < 2:
            break
        n_slots = len(expandable)
        node_to_slot = np.full(len(feature), -1, dtype=np.int32)
        for s, nd in enumerate(expandable):
            node_to_slot[nd] = s
        row_slot = node_to_slot[row_node]

        shape = (n_slots, n_features, max_bins)
        hist_g = np.zeros(shape)
        hist_gc = np.zeros(shape)
        hist_h = np.zeros(shape)
        hist_hc = np.zeros(shape)
        hist_n = np.zeros(shape, dtype=np.int64)
        accumulate_histograms(codes, row_slot, g, h, hist_g, hist_gc, hist_h, hist_hc, hist_n)
        sum_g = hist_g + hist_gc
        sum_h = hist_h + hist_hc

        if depth == 0:
            node_G[0] = float(np.sum(sum_g[0, 0, :]))
            node_H[0] = float(np.sum(sum_h[0, 0, :]))
            node_value[0] = -node_G[0] / (node_H[0] + l2_penalty)

        cum_g = np.cumsum(sum_g, axis=2)[:, :, :-1]
        cum_h = np.cumsum(sum_h, axis=2)[:, :, :-1]
        cum_n = np.cumsum(hist_n, axis=2)[:, :, :-1]

        G_p = np.asarray([node_G[nd] for nd in expandable])[:, None, None]
        H_p = np.asarray([node_H[nd] for nd in expandable])[:, None, None]
        N_p = np.asarray([node_count[nd] for nd in expandable], dtype=np.int64)[:, None, None]
        G_r = G_p - cum_g
        H_r = H_p - cum_h
        N_r = N_p - cum_n

        valid = thr_valid[None, :, :] & (cum_n >= 1) & (N_r >= 1)
        valid &= (cum_h >= min_child_hessian) & (H_r >= min_child_hessian)
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = 0.5 * (cum_g**2 / (cum_h + l2_penalty)
                          + G_r**2 / (H_r + l2_penalty)
                          - G_p**2 / (H_p + l2_penalty))
        gain = np.where(valid, gain, -np.inf)
        gain[np.isnan(gain)] = -np.inf

        # argmax over C-order (feature, bin) picks the lowest feature then the
        # lowest bin on exact ties
        flat = gain.reshape(n_slots, -1)
        best = np.argmax(flat, axis=1)
        best_gain = flat[np.arange(n_slots), best]

        new_level: list[int] = []
        n_thr = max_bins - 1
        for s, nd in enumerate(expandable):
            if not best_gain[s] > 0.0:
                continue
            f_best, t_best = divmod(int(best[s]), n_thr)
            G_l = float(cum_g[s, f_best, t_best])
            H_l = float(cum_h[s, f_best, t_best])
            N_l = int(cum_n[s, f_best, t_best])
            left_id = len(feature)
            right_id = left_id + 1
            for child_G, child_H, child_N in ((G_l, H_l, N_l),
                                              (node_G[nd] - G_l, node_H[nd] - H_l,
                                               node_count[nd] - N_l)):
                feature.append(np.int32(-1))
                threshold.append(np.int32(-1))
                left.append(np.int32(-1))
                right.append(np.int32(-1))
                node_G.append(child_G)
                node_H.append(child_H)
                node_count.append(child_N)
                node_value.append(-child_G / (child_H + l2_penalty))
            feature[nd] = np.int32(f_best)
            threshold[nd] = np.int32(t_best)
            left[nd] = np.int32(left_id)
            right[nd] = np.int32(right_id)
            new_level.extend((left_id, right_id))

        if not new_level:
            break
        apply_pending_splits(codes, row_node,
                             np.asarray(feature, dtype=np.int32),
                             np.asarray(threshold, dtype=np.int32),
                             np.asarray(left, dtype=np.int32),
                             np.asarray(right, dtype=np.int32))
        level_nodes = new_level

    if len(feature) == 1:
        # single leaf: compute root stats directly (the histogram pass may not
        # have run when max_depth is 0 or the root is too small to split)
        if max_depth == 0 or node_count[0] < 2 or max_bins < 2:
            node_G[0] = float(np.sum(g))
            node_H[0] = float(np.sum(h))
            node_value[0] = -node_G[0] / (node_H[0] + l2_penalty)

    tree = Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.int32),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(node_value, dtype=np.float64),
        count=np.asarray(node_count, dtype=np.int64),
    )
    return tree, row_node


def build_tree(binned, g, h, l2_penalty: float, max_depth: int,
               min_child_hessian: float = 1e-3) -> Tree:
    """Grow a tree on a fitted BinnedMatrix; see :func:`grow_tree`."""
    tree, _ = grow_tree(binned.codes, binned.bin_counts, g, h,
                        l2_penalty, max_depth, min_child_hessian)
    return tree


def predict_tree(tree: Tree, codes: np.ndarray) -> np.ndarray:
    """Route binned rows (feature-major codes) to leaf values."""
    n_rows = codes.shape[1]
    nd = np.zeros(n_rows, dtype=np.int32)
    while True:
        f = tree.feature[nd]
        active = f >= 0
        if not active.any():
            break
        rows = np.nonzero(active)[0]
        cur = nd[rows]
        goes_left = codes[f[rows], rows] <= tree.threshold[cur]
        nd[rows] = np.where(goes_left, tree.left[cur], tree.right[cur])
    return tree.value[nd]
