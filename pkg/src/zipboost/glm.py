"""Poisson GLM with log link and exposure offset, fitted by iteratively
reweighted least squares with step-halving.

The design matrix is an intercept, the numeric features as-is, and one-hot
dummies for every categorical level except the alphabetically first
(reference) level.  Serves as the linear comparator for the boosted models.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .data import Dataset, Schema
from .errors import FitError, PredictionError
from .metrics import unit_deviance

GLM_FORMAT_VERSION = 1
MAX_ITERATIONS = 100
COEF_TOL = 1e-8


@dataclass
class GlmModel:
    schema: Schema
    column_names: list[str]              # design columns, intercept first
    coefficients: np.ndarray
    categorical_levels: dict[str, list[str]] = field(default_factory=dict)
    converged: bool = False
    iterations: int = 0
    final_deviance: float = float("nan")

    @property
    def loss(self):
        # duck-typed spot that metrics.evaluate inspects for the model family
        from .losses import LossSpec
        return LossSpec(kind="poisson")

    def to_dict(self) -> dict:
        return {
            "format_version": GLM_FORMAT_VERSION,
            "kind": "poisson_glm",
            "schema": self.schema.to_dict(),
            "column_names": self.column_names,
            "coefficients": self.coefficients.tolist(),
            "categorical_levels": self.categorical_levels,
            "converged": self.converged,
            "iterations": self.iterations,
            "final_deviance": self.final_deviance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GlmModel":
        if d.get("kind") != "poisson_glm":
            raise PredictionError(f"not a poisson_glm document: kind={d.get('kind')!r}")
        return cls(
            schema=Schema.from_dict(d["schema"]),
            column_names=list(d["column_names"]),
            coefficients=np.asarray(d["coefficients"], dtype=np.float64),
            categorical_levels={k: list(v) for k, v in d["categorical_levels"].items()},
            converged=bool(d["converged"]),
            iterations=int(d["iterations"]),
            final_deviance=float(d["final_deviance"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, separators=(",", ":"))

    @classmethod
    def load(cls, path) -> "GlmModel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _design_matrix(data: Dataset, schema: Schema,
                   levels: dict[str, list[str]] | None = None,
                   warn_unseen: bool = False):
    """(X, column names, levels) with intercept first and drop-first dummies.

    When ``levels`` is given (prediction), unseen categories collapse to the
    reference level with a warning.
    """
    n = data.n_rows
    cols = [np.ones(n)]
    names = ["(intercept)"]
    fitted_levels: dict[str, list[str]] = {}
    for name, kind in schema.feature_columns:
        if kind == "numeric":
            cols.append(data.numeric[name])
            names.append(name)
            continue
        col = data.categorical[name]
        if levels is None:
            cats = sorted(col.categories)
        else:
            cats = levels[name]
        fitted_levels[name] = list(cats)
        index_of = {c: i for i, c in enumerate(cats)}
        raw = [col.categories[c] for c in col.codes]
        mapped = np.asarray([index_of.get(v, -1) for v in raw], dtype=np.int64)
        if warn_unseen and np.any(mapped < 0):
            unseen = sorted({v for v in raw if v not in index_of})
            warnings.warn(f"unseen categories in {name!r} mapped to reference level: {unseen}")
        mapped[mapped < 0] = 0
        for lvl_idx in range(1, len(cats)):   # reference = alphabetically first
            cols.append((mapped == lvl_idx).astype(np.float64))
            names.append(f"{name}={cats[lvl_idx]}")
    return np.column_stack(cols), names, fitted_levels


def _check_full_rank(X: np.ndarray, names: list[str]) -> None:
    _, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(X.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    deficient = diag <= tol
    if np.any(deficient):
        bad = [names[piv[i]] for i in np.nonzero(deficient)[0]]
        raise FitError(f"design matrix is rank deficient; collinear columns: {bad}")


def fit_glm(data: Dataset, schema: Schema) -> GlmModel:
    """Maximize the Poisson likelihood with log(w) offset via IRLS.

    Starts from the intercept-only MLE, halves steps whenever the deviance
    would increase, and flags convergence when the largest coefficient update
    drops below 1e-8 (at most 100 iterations).
    """
    X, names, levels = _design_matrix(data, schema)
    _check_full_rank(X, names)
    y = data.y.astype(np.float64)
    offset = np.log(data.w)

    beta = np.zeros(X.shape[1])
    beta[0] = np.log(max(y.sum(), 1e-12) / data.w.sum())
    eta = X @ beta + offset
    mu = np.exp(eta)
    deviance = float(np.sum(unit_deviance(data.y, mu, 0.0)))

    converged = False
    iterations = 0
    for iterations in range(1, MAX_ITERATIONS + 1):
        W = mu
        z = (eta - offset) + (y - mu) / mu
        XtW = X.T * W
        try:
            new_beta = linalg.solve(XtW @ X, XtW @ z, assume_a="pos")
        except linalg.LinAlgError as exc:
            raise FitError(f"IRLS normal equations singular: {exc}") from exc
        step = new_beta - beta
        # step-halving: accept the first candidate that does not worsen deviance
        scale = 1.0
        for _ in range(30):
            cand = beta + scale * step
            cand_eta = X @ cand + offset
            cand_mu = np.exp(np.clip(cand_eta, -700, 700))
            cand_dev = float(np.sum(unit_deviance(data.y, np.maximum(cand_mu, 1e-300), 0.0)))
            if cand_dev <= deviance + 1e-12:
                break
            scale *= 0.5
        max_update = float(np.max(np.abs(scale * step)))
        beta, eta, mu, deviance = cand, cand_eta, np.maximum(cand_mu, 1e-300), cand_dev
        if max_update < COEF_TOL:
            converged = True
            break
    if not converged:
        warnings.warn(f"IRLS did not converge in {MAX_ITERATIONS} iterations")
    return GlmModel(schema=schema, column_names=names, coefficients=beta,
                    categorical_levels=levels, converged=converged,
                    iterations=iterations, final_deviance=deviance)


def predict_glm(model: GlmModel, data: Dataset) -> np.ndarray:
    """Per-row mean mu = w * exp(X beta)."""
    X, names, _ = _design_matrix(data, model.schema,
                                 levels=model.categorical_levels, warn_unseen=True)
    if names != model.column_names:
        raise PredictionError(
            f"design columns do not match the fitted model: {names} vs {model.column_names}")
    return data.w * np.exp(X @ model.coefficients)
