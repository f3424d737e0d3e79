"""Negative log-likelihoods, gradients, and Hessians for the boosting objectives.

Three objectives are supported, all parameterized by a raw boosting score F
(log scale) with the exposure w entering as a multiplicative offset on the
mean, mu = w * exp(F):

``poisson``
    Plain Poisson counts.
``zipb1``
    Zero-inflated Poisson whose inflation probability is tied to the mean,
    p = 1 / (1 + mu**gamma), so a single score drives both parameters.
``zipb2``
    Zero-inflated Poisson with independent scores for the mean (F_po) and
    the inflation probability (F_logit), p = sigmoid(F_logit).

All functions are vectorized over rows.  Constant log(y!) terms are dropped
uniformly; full normalized likelihoods live in :mod:`zipboost.metrics`.

Hard contract: scores are clamped to [-SCORE_LIMIT, SCORE_LIMIT] before
exponentiation, and every exp/log goes through log-sum-exp or sigmoid
primitives, so all outputs are finite for finite inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

SCORE_LIMIT = 30.0

LOSS_KINDS = ("poisson", "zipb1", "zipb2")


class GradHess(NamedTuple):
    """Per-row first and second derivatives of a loss w.r.t. the score."""

    g: np.ndarray
    h: np.ndarray


class ZipParams(NamedTuple):
    """Zero-inflated Poisson parameters: mean component mu and inflation
    probability p.  Expected count is (1 - p) * mu, variance
    mu * (1 - p) * (1 + p * mu)."""

    mu: np.ndarray
    p: np.ndarray

    @property
    def expected_count(self) -> np.ndarray:
        return (1.0 - self.p) * self.mu


@dataclass(frozen=True)
class LossSpec:
    """Tagged objective owning gradient/Hessian evaluation.

    gamma is required (and only valid) for kind ``zipb1`` and must be
    positive.  hessian_floor is the lower clamp applied to every Hessian
    after analytic evaluation; Newton steps need positive curvature and the
    zero-count branches of both ZIP objectives can produce negative values.
    """

    kind: str
    gamma: float | None = None
    hessian_floor: float = 1e-6

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.kind == "zipb1":
            if self.gamma is None or not self.gamma > 0:
                raise ValueError("zipb1 requires gamma > 0")
        elif self.gamma is not None:
            raise ValueError(f"gamma is only valid for zipb1, not {self.kind!r}")
        if not self.hessian_floor > 0:
            raise ValueError("hessian_floor must be positive")

    @property
    def n_ensembles(self) -> int:
        return 2 if self.kind == "zipb2" else 1


def _log_mu(F, w):
    """log(mu) = log(w) + F with the score clamp applied."""
    F = np.clip(np.asarray(F, dtype=np.float64), -SCORE_LIMIT, SCORE_LIMIT)
    return np.log(np.asarray(w, dtype=np.float64)) + F


def _floor(h, hessian_floor):
    return np.maximum(h, hessian_floor)


# ---------------------------------------------------------------------------
# Poisson
# ---------------------------------------------------------------------------

def poisson_nll(y, F, w):
    """mu - y*log(mu), the Poisson deviance-scale loss without log(y!)."""
    log_mu = _log_mu(F, w)
    y = np.asarray(y, dtype=np.float64)
    return np.exp(log_mu) - y * log_mu


def poisson_grad_hess(y, F, w, hessian_floor=1e-6):
    """g = mu - y, h = mu (floored)."""
    mu = np.exp(_log_mu(F, w))
    g = mu - np.asarray(y, dtype=np.float64)
    return GradHess(g, _floor(mu, hessian_floor))


# ---------------------------------------------------------------------------
# ZIP with p linked to the mean: p = 1 / (1 + mu**gamma)
# ---------------------------------------------------------------------------

def zipb1_p_of_mu(mu, gamma):
    """Inflation probability 1/(1 + mu**gamma), via sigmoid(-gamma*log(mu))."""
    return expit(-gamma * np.log(np.asarray(mu, dtype=np.float64)))


def zipb1_nll(y, F, w, gamma):
    """Negative ZIP log-likelihood under the linked parameterization.

    y == 0: -log(1 + mu**g * exp(-mu)) + log(1 + mu**g)
    y >= 1: -g*log(mu) + log(1 + mu**g) + mu - y*log(mu)

    where g = gamma.  Both log(1 + .) terms are evaluated with logaddexp so
    large gamma*log(mu) cannot overflow.
    """
    log_mu = _log_mu(F, w)
    y = np.asarray(y, dtype=np.float64)
    mu = np.exp(log_mu)
    t = gamma * log_mu
    nll0 = -np.logaddexp(0.0, t - mu) + np.logaddexp(0.0, t)
    nll1 = -t + np.logaddexp(0.0, t) + mu - y * log_mu
    return np.where(y == 0, nll0, nll1)


def zipb1_grad_hess(y, F, w, gamma, hessian_floor=1e-6):
    """Analytic derivatives of :func:`zipb1_nll` w.r.t. the score F.

    With r = sigmoid(gamma*log(mu) - mu) and b = sigmoid(gamma*log(mu)):

    y == 0: g = r*(mu - gamma) + gamma*b
            h = r*mu - r*(1 - r)*(gamma - mu)**2 + gamma**2 * b*(1 - b)
    y >= 1: g = gamma*b + mu - gamma - y
            h = gamma**2 * b*(1 - b) + mu

    These are the ratio forms mu**gamma/(1 + mu**gamma) etc. rewritten as
    sigmoids of log quantities for overflow safety.
    """
    log_mu = _log_mu(F, w)
    y = np.asarray(y, dtype=np.float64)
    mu = np.exp(log_mu)
    t = gamma * log_mu
    r = expit(t - mu)
    b = expit(t)
    d = gamma - mu
    g0 = r * (mu - gamma) + gamma * b
    h0 = r * mu - r * (1.0 - r) * d * d + gamma * gamma * b * (1.0 - b)
    g1 = gamma * b + mu - gamma - y
    h1 = gamma * gamma * b * (1.0 - b) + mu
    is_zero = y == 0
    g = np.where(is_zero, g0, g1)
    h = np.where(is_zero, h0, h1)
    return GradHess(g, _floor(h, hessian_floor))


# ---------------------------------------------------------------------------
# ZIP with independent scores for the mean and the inflation probability
# ---------------------------------------------------------------------------

def zipb2_nll(y, F_po, F_logit, w):
    """Negative ZIP log-likelihood with p = sigmoid(F_logit), mu = w*exp(F_po).

    y == 0: -log(p + (1-p)*exp(-mu)) = -logaddexp(s, -mu) + logaddexp(0, s)
    y >= 1: -log(1-p) - y*log(mu) + mu

    with s the clamped logit score.
    """
    log_mu = _log_mu(F_po, w)
    s = np.clip(np.asarray(F_logit, dtype=np.float64), -SCORE_LIMIT, SCORE_LIMIT)
    y = np.asarray(y, dtype=np.float64)
    mu = np.exp(log_mu)
    softplus_s = np.logaddexp(0.0, s)
    nll0 = -np.logaddexp(s, -mu) + softplus_s
    nll1 = softplus_s - y * log_mu + mu
    return np.where(y == 0, nll0, nll1)


def zipb2_grad_hess_po(y, F_po, F_logit, w, hessian_floor=1e-6):
    """Derivatives of :func:`zipb2_nll` in the mean direction, p held fixed.

    y == 0: g = (1-p)*mu*exp(-mu) / (p + (1-p)*exp(-mu)) = mu*sigmoid(-(s+mu))
            h = g*(1 - mu) + g**2
    y >= 1: g = mu - y,  h = mu

    The y == 0 branch is the derivative of the y == 0 loss itself, checked
    against central finite differences in the test suite.
    """
    log_mu = _log_mu(F_po, w)
    s = np.clip(np.asarray(F_logit, dtype=np.float64), -SCORE_LIMIT, SCORE_LIMIT)
    y = np.asarray(y, dtype=np.float64)
    mu = np.exp(log_mu)
    g0 = mu * expit(-(s + mu))
    h0 = g0 * (1.0 - mu) + g0 * g0
    is_zero = y == 0
    g = np.where(is_zero, g0, mu - y)
    h = np.where(is_zero, h0, mu)
    return GradHess(g, _floor(h, hessian_floor))


def zipb2_grad_hess_logit(y, F_po, F_logit, w, hessian_floor=1e-6):
    """Derivatives of :func:`zipb2_nll` in the logit direction, mu held fixed.

    y == 0: g = sigmoid(s) - sigmoid(s + mu)
            h = sig'(s) - sig'(s + mu)      with sig'(x) = sigmoid(x)*(1-sigmoid(x))
    y >= 1: g = sigmoid(s),  h = sig'(s)

    Callers must pass the already-updated mean score for the current
    iteration; the coordinate-descent booster does so.
    """
    log_mu = _log_mu(F_po, w)
    s = np.clip(np.asarray(F_logit, dtype=np.float64), -SCORE_LIMIT, SCORE_LIMIT)
    y = np.asarray(y, dtype=np.float64)
    mu = np.exp(log_mu)
    p = expit(s)
    q = expit(s + mu)
    is_zero = y == 0
    g = np.where(is_zero, p - q, p)
    h = np.where(is_zero, p * (1.0 - p) - q * (1.0 - q), p * (1.0 - p))
    return GradHess(g, _floor(h, hessian_floor))


# ---------------------------------------------------------------------------
# Dispatch helpers used by the booster
# ---------------------------------------------------------------------------

def single_ensemble_nll(spec: LossSpec, y, F, w) -> float:
    """Mean training loss for the single-score objectives."""
    if spec.kind == "poisson":
        return float(np.mean(poisson_nll(y, F, w)))
    if spec.kind == "zipb1":
        return float(np.mean(zipb1_nll(y, F, w, spec.gamma)))
    raise ValueError(f"{spec.kind!r} is not a single-ensemble loss")


def single_ensemble_grad_hess(spec: LossSpec, y, F, w) -> GradHess:
    if spec.kind == "poisson":
        return poisson_grad_hess(y, F, w, spec.hessian_floor)
    if spec.kind == "zipb1":
        return zipb1_grad_hess(y, F, w, spec.gamma, spec.hessian_floor)
    raise ValueError(f"{spec.kind!r} is not a single-ensemble loss")
