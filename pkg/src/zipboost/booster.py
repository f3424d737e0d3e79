"""Newton boosting orchestration: iterate tree fits against loss derivatives,
maintain one or two score vectors, and expose prediction, persistence, and
cross-validation.

Single-score objectives (poisson, zipb1) fit one tree per iteration; zipb2
alternates a mean-direction tree and a logit-direction tree in a coordinate-
descent cycle, with the logit derivatives evaluated at the already-updated
mean score.  Scores start at 0 and the exposure enters only through
mu = w * exp(F), never as a feature.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import losses
from ._kernels import predict_ensemble
from .data import BinnedFeature, Dataset, Schema, fit_bins
from .errors import FitError, PredictionError
from .losses import LossSpec, ZipParams
from .tree import Tree, grow_tree

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class BoostConfig:
    """Training hyperparameters; defaults are 500 trees of depth 8."""

    n_trees: int = 500
    learning_rate: float = 0.1
    l2_penalty: float = 0.0
    max_depth: int = 8
    min_child_hessian: float = 1e-3
    seed: int = 0
    early_stopping_rounds: int | None = None

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be nonnegative")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "learning_rate": self.learning_rate,
            "l2_penalty": self.l2_penalty,
            "max_depth": self.max_depth,
            "min_child_hessian": self.min_child_hessian,
            "seed": self.seed,
            "early_stopping_rounds": self.early_stopping_rounds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostConfig":
        return cls(**{k: d[k] for k in (
            "n_trees", "learning_rate", "l2_penalty", "max_depth",
            "min_child_hessian", "seed", "early_stopping_rounds") if k in d})


def default_search_grid(kind: str,
                        alphas=(0.01, 0.05, 0.1),
                        lambdas=(0.0, 100.0, 200.0, 300.0, 400.0, 500.0),
                        gammas=(1.0, 5.0, 10.0, 50.0, 100.0, 500.0)) -> list[dict]:
    """Standard hyperparameter search grid as a flat candidate list.

    Enumeration order is learning rate outermost, then L2 penalty, then (for
    zipb1 only) gamma; ties in cross-validation resolve to the first entry.
    """
    if kind == "zipb1":
        return [{"learning_rate": a, "l2_penalty": l, "gamma": g}
                for a, l, g in itertools.product(alphas, lambdas, gammas)]
    return [{"learning_rate": a, "l2_penalty": l}
            for a, l in itertools.product(alphas, lambdas)]


class _FlatEnsemble:
    """Trees concatenated into flat arrays for the prediction kernel."""

    def __init__(self, trees: list[Tree]):
        if trees:
            offsets = np.cumsum([0] + [t.n_nodes for t in trees[:-1]])
            self.roots = offsets.astype(np.int64)
            self.feature = np.concatenate([t.feature for t in trees])
            self.left = np.concatenate(
                [np.where(t.left >= 0, t.left + off, -1) for t, off in zip(trees, offsets)]
            ).astype(np.int32)
            self.right = np.concatenate(
                [np.where(t.right >= 0, t.right + off, -1) for t, off in zip(trees, offsets)]
            ).astype(np.int32)
            self.threshold = np.concatenate([t.threshold for t in trees])
            self.value = np.concatenate([t.value for t in trees])
        else:
            self.roots = np.zeros(0, dtype=np.int64)
            self.feature = np.zeros(0, dtype=np.int32)
            self.left = self.right = self.threshold = np.zeros(0, dtype=np.int32)
            self.value = np.zeros(0, dtype=np.float64)

    def score(self, row_codes: np.ndarray) -> np.ndarray:
        out = np.zeros(row_codes.shape[0], dtype=np.float64)
        if self.roots.size:
            predict_ensemble(row_codes, self.roots, self.feature, self.threshold,
                             self.left, self.right, self.value, out)
        return out


@dataclass
class Model:
    """Fitted ensemble(s) plus the feature transform needed to apply them."""

    loss: LossSpec
    config: BoostConfig
    schema: Schema
    features: list[BinnedFeature]
    trees_po: list[Tree]
    trees_logit: list[Tree] = field(default_factory=list)
    train_nll: list[float] = field(default_factory=list)
    fingerprint: str = ""

    def __post_init__(self):
        self._flat_po = None
        self._flat_logit = None
        if not self.fingerprint:
            self.fingerprint = self._compute_fingerprint()

    def _compute_fingerprint(self) -> str:
        doc = {
            "schema": self.schema.to_dict(),
            "features": [f.to_dict() for f in self.features],
        }
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.features]

    def transform(self, data: Dataset) -> np.ndarray:
        missing = [c for c in self.schema.feature_names if c not in data.column_names]
        extra = [c for c in data.column_names if c not in self.schema.feature_names]
        if missing or extra:
            raise PredictionError(
                f"data does not match the model schema: missing columns {missing}, "
                f"extra columns {extra}")
        out = np.empty((len(self.features), data.n_rows), dtype=np.uint16)
        for i, f in enumerate(self.features):
            out[i] = f.transform(data)
        return out

    def scores(self, data: Dataset) -> tuple[np.ndarray, np.ndarray | None]:
        """(F_po, F_logit) raw prediction scores; F_logit is None unless zipb2."""
        row_codes = np.ascontiguousarray(self.transform(data).T)
        if self._flat_po is None:
            self._flat_po = _FlatEnsemble(self.trees_po)
        F_po = self.config.learning_rate * self._flat_po.score(row_codes)
        if self.loss.kind != "zipb2":
            return F_po, None
        if self._flat_logit is None:
            self._flat_logit = _FlatEnsemble(self.trees_logit)
        return F_po, self.config.learning_rate * self._flat_logit.score(row_codes)

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.loss.kind,
            "gamma": self.loss.gamma,
            "hessian_floor": self.loss.hessian_floor,
            "config": self.config.to_dict(),
            "schema": self.schema.to_dict(),
            "features": [f.to_dict() for f in self.features],
            "fingerprint": self.fingerprint,
            "train_nll": self.train_nll,
            "trees_po": [t.to_dict() for t in self.trees_po],
            "trees_logit": [t.to_dict() for t in self.trees_logit],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Model":
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise PredictionError(f"unsupported model format version {d.get('format_version')!r}")
        return cls(
            loss=LossSpec(kind=d["kind"], gamma=d["gamma"], hessian_floor=d["hessian_floor"]),
            config=BoostConfig.from_dict(d["config"]),
            schema=Schema.from_dict(d["schema"]),
            features=[BinnedFeature.from_dict(f) for f in d["features"]],
            trees_po=[Tree.from_dict(t) for t in d["trees_po"]],
            trees_logit=[Tree.from_dict(t) for t in d["trees_logit"]],
            train_nll=list(d.get("train_nll", [])),
            fingerprint=d["fingerprint"],
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, separators=(",", ":"))

    @classmethod
    def load(cls, path) -> "Model":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _warn_if_degenerate(data: Dataset, kind: str) -> None:
    if data.n_rows and not np.any(data.y > 0):
        extreme = "p -> 1" if kind != "poisson" else "mu -> 0"
        warnings.warn(f"all claim counts are zero; fitted rates degenerate ({extreme})",
                      stacklevel=3)


def fit(data: Dataset, schema: Schema, loss: LossSpec, config: BoostConfig) -> Model:
    """Train a single-ensemble model (poisson or zipb1).

    Scores start at zero; each iteration fits one tree to the current
    gradient/Hessian and advances the score by learning_rate times the leaf
    value.  Records the mean training loss after every iteration.
    """
    if loss.kind == "zipb2":
        raise FitError("use fit_zipb2 for the two-ensemble objective")
    _warn_if_degenerate(data, loss.kind)
    binned = fit_bins(data, schema)
    codes, bin_counts = binned.codes, binned.bin_counts
    y, w = data.y, data.w
    F = np.zeros(data.n_rows)
    trees: list[Tree] = []
    history = [losses.single_ensemble_nll(loss, y, F, w)]
    for _ in range(config.n_trees):
        g, h = losses.single_ensemble_grad_hess(loss, y, F, w)
        tree, leaf_of_row = grow_tree(codes, bin_counts, g, h, config.l2_penalty,
                                      config.max_depth, config.min_child_hessian)
        F += config.learning_rate * tree.value[leaf_of_row]
        trees.append(tree)
        history.append(losses.single_ensemble_nll(loss, y, F, w))
        if (config.early_stopping_rounds is not None
                and len(history) > config.early_stopping_rounds
                and history[-1] >= history[-1 - config.early_stopping_rounds]):
            break
    return Model(loss=loss, config=config, schema=schema, features=binned.features,
                 trees_po=trees, train_nll=history)


def fit_zipb2(data: Dataset, schema: Schema, config: BoostConfig,
              hessian_floor: float = 1e-6) -> Model:
    """Train the two-ensemble model by alternating coordinate-descent steps.

    Per iteration: fit the mean-direction tree at the previous scores and
    apply it, then fit the logit-direction tree with derivatives taken at the
    updated mean score.  Both scores start at zero (initial p = 0.5).
    """
    loss = LossSpec(kind="zipb2", hessian_floor=hessian_floor)
    _warn_if_degenerate(data, loss.kind)
    binned = fit_bins(data, schema)
    codes, bin_counts = binned.codes, binned.bin_counts
    y, w = data.y, data.w
    F_po = np.zeros(data.n_rows)
    F_logit = np.zeros(data.n_rows)
    trees_po: list[Tree] = []
    trees_logit: list[Tree] = []
    history = [float(np.mean(losses.zipb2_nll(y, F_po, F_logit, w)))]
    for _ in range(config.n_trees):
        g, h = losses.zipb2_grad_hess_po(y, F_po, F_logit, w, hessian_floor)
        tree, leaf_of_row = grow_tree(codes, bin_counts, g, h, config.l2_penalty,
                                      config.max_depth, config.min_child_hessian)
        F_po += config.learning_rate * tree.value[leaf_of_row]
        trees_po.append(tree)

        g, h = losses.zipb2_grad_hess_logit(y, F_po, F_logit, w, hessian_floor)
        tree, leaf_of_row = grow_tree(codes, bin_counts, g, h, config.l2_penalty,
                                      config.max_depth, config.min_child_hessian)
        F_logit += config.learning_rate * tree.value[leaf_of_row]
        trees_logit.append(tree)
        history.append(float(np.mean(losses.zipb2_nll(y, F_po, F_logit, w))))
    return Model(loss=loss, config=config, schema=schema, features=binned.features,
                 trees_po=trees_po, trees_logit=trees_logit, train_nll=history)


def predict(model: Model, data: Dataset) -> ZipParams:
    """Per-row (mu_hat, p_hat); expected count is (1 - p_hat) * mu_hat.

    poisson: p_hat = 0; zipb1: p_hat = 1/(1 + mu_hat**gamma);
    zipb2: p_hat = sigmoid(F_logit).
    """
    F_po, F_logit = model.scores(data)
    mu = np.exp(np.log(data.w) + np.clip(F_po, -losses.SCORE_LIMIT, losses.SCORE_LIMIT))
    if model.loss.kind == "poisson":
        p = np.zeros_like(mu)
    elif model.loss.kind == "zipb1":
        p = losses.zipb1_p_of_mu(mu, model.loss.gamma)
    else:
        p = expit(np.clip(F_logit, -losses.SCORE_LIMIT, losses.SCORE_LIMIT))
    return ZipParams(mu=mu, p=p)


def fit_any(data: Dataset, schema: Schema, loss: LossSpec, config: BoostConfig) -> Model:
    """Dispatch to :func:`fit` or :func:`fit_zipb2` by loss kind."""
    if loss.kind == "zipb2":
        return fit_zipb2(data, schema, config, hessian_floor=loss.hessian_floor)
    return fit(data, schema, loss, config)


def cross_validate(data: Dataset, schema: Schema, loss_kind: str,
                   grid: list[dict], config_base: BoostConfig | None = None,
                   n_folds: int = 3, seed: int = 0):
    """Grid search by K-fold mean validation deviance.

    Every grid entry is a dict of BoostConfig overrides plus an optional
    "gamma" (zipb1).  Folds come from a seeded permutation; the selected
    candidate is the argmin of the across-fold mean deviance with ties going
    to the earliest grid entry.  Returns (best_entry, fold_table) where
    fold_table[i] holds the per-fold EvalReports of grid entry i.
    """
    from .metrics import evaluate

    if not grid:
        raise FitError("grid must contain at least one candidate")
    base = config_base or BoostConfig()
    rng = np.random.default_rng(seed)
    folds = np.array_split(rng.permutation(data.n_rows), n_folds)
    for k, fold in enumerate(folds):
        if not np.any(data.y[fold] > 0):
            warnings.warn(f"fold {k} contains no positive claim rows; retained")

    fold_table: list[list] = []
    mean_dev: list[float] = []
    for entry in grid:
        overrides = {k: v for k, v in entry.items() if k != "gamma"}
        config = BoostConfig.from_dict({**base.to_dict(), **overrides})
        if loss_kind == "zipb1":
            loss = LossSpec(kind="zipb1", gamma=entry["gamma"])
        else:
            loss = LossSpec(kind=loss_kind)
        reports = []
        for k in range(n_folds):
            train_idx = np.concatenate([folds[j] for j in range(n_folds) if j != k])
            model = fit_any(data.take(train_idx), schema, loss, config)
            reports.append(evaluate(model, data.take(folds[k])))
        fold_table.append(reports)
        mean_dev.append(float(np.mean([r.mean_deviance for r in reports])))
    best = int(np.argmin(mean_dev))
    return grid[best], fold_table
