"""Model interpretation: split-variance feature importance and pairwise
interaction strength, computed from recorded node values and counts so they
work on deserialized models without data access.

For zipb2 the mean and logit ensembles get separate tables; no fusion rule is
applied across ensembles.
"""

from __future__ import annotations

import itertools
import warnings

import numpy as np

from .tree import Tree


def _ensembles(model) -> dict[str, list[Tree]]:
    if model.loss.kind == "zipb2":
        return {"mu": model.trees_po, "logit": model.trees_logit}
    return {"mu": model.trees_po}


def importance_of_trees(trees: list[Tree], feature_names: list[str]) -> dict[str, float]:
    """Per-feature importance normalized to sum to 100.

    Every internal node split by feature F contributes
    (v1 - m)^2 * c1 + (v2 - m)^2 * c2 with (v, c) the child node values and
    row counts and m their count-weighted mean.  Features never used score
    exactly 0; if no tree has any split the table is all zeros (normalization
    skipped with a warning).
    """
    raw = np.zeros(len(feature_names), dtype=np.float64)
    for tree in trees:
        internal = np.nonzero(tree.feature >= 0)[0]
        for nd in internal:
            f = tree.feature[nd]
            l, r = tree.left[nd], tree.right[nd]
            v1, v2 = tree.value[l], tree.value[r]
            c1, c2 = tree.count[l], tree.count[r]
            m = (v1 * c1 + v2 * c2) / (c1 + c2)
            raw[f] += (v1 - m) ** 2 * c1 + (v2 - m) ** 2 * c2
    total = raw.sum()
    if total == 0.0:
        warnings.warn("model has no splits; importance normalization skipped")
        return {name: 0.0 for name in feature_names}
    return {name: float(100.0 * v / total) for name, v in zip(feature_names, raw)}


def feature_importance(model) -> dict[str, dict[str, float]]:
    """Importance table per ensemble: {"mu": {...}} and, for zipb2, "logit"."""
    return {name: importance_of_trees(trees, model.feature_names)
            for name, trees in _ensembles(model).items()}


def _leaf_paths(tree: Tree) -> list[tuple[frozenset, float]]:
    """(features on the root-to-leaf path, leaf value) per leaf."""
    out: list[tuple[frozenset, float]] = []
    stack: list[tuple[int, frozenset]] = [(0, frozenset())]
    while stack:
        nd, feats = stack.pop()
        f = tree.feature[nd]
        if f < 0:
            out.append((feats, float(tree.value[nd])))
        else:
            feats = feats | {int(f)}
            stack.append((int(tree.left[nd]), feats))
            stack.append((int(tree.right[nd]), feats))
    return out


def interaction_of_trees(trees: list[Tree],
                         feature_names: list[str]) -> dict[tuple[str, str], float]:
    """Pairwise interaction strength accumulated over trees.

    For each tree containing both features of a pair, the contribution is the
    absolute difference between the total leaf value over leaves whose path
    uses both features and the total over leaves whose path uses exactly one.
    Pairs never co-occurring in any tree are absent (strength 0); self-pairs
    are excluded by construction.
    """
    strength: dict[tuple[int, int], float] = {}
    for tree in trees:
        paths = _leaf_paths(tree)
        present = sorted(set().union(*[fs for fs, _ in paths])) if paths else []
        for fa, fb in itertools.combinations(present, 2):
            combined = 0.0
            separate = 0.0
            for feats, value in paths:
                has_a, has_b = fa in feats, fb in feats
                if has_a and has_b:
                    combined += value
                elif has_a or has_b:
                    separate += value
            strength[(fa, fb)] = strength.get((fa, fb), 0.0) + abs(combined - separate)
    return {(feature_names[a], feature_names[b]): v for (a, b), v in strength.items()}


def interaction_strength(model) -> dict[str, dict[tuple[str, str], float]]:
    """Interaction table per ensemble, keyed like :func:`feature_importance`."""
    return {name: interaction_of_trees(trees, model.feature_names)
            for name, trees in _ensembles(model).items()}


def top_k(table: dict, k: int = 10) -> list[tuple]:
    """Highest-scoring entries, stable-sorted (ties by key) for deterministic
    output."""
    items = sorted(table.items(), key=lambda kv: kv[0])
    items.sort(key=lambda kv: kv[1], reverse=True)
    return items[:k]
