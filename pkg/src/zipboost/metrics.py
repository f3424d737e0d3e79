"""Evaluation battery: ZIP unit deviance, McFadden pseudo R-squared, the
Vuong statistic for non-nested model comparison, and randomized quantile
residuals.

Unlike the training losses, everything here uses full normalized likelihoods
(including log(y!) terms) so statistics are comparable across model families.
Probabilities are clamped at 1e-12 before logs and normal quantiles.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln
from scipy.stats import norm, poisson

from .errors import MetricError

PROB_FLOOR = 1e-12


def zip_pmf(y, mu, p):
    """Probability mass of the zero-inflated Poisson:
    p + (1-p)*exp(-mu) at zero, (1-p)*Poisson(y; mu) above."""
    y = np.asarray(y)
    mu = np.asarray(mu, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    base = (1.0 - p) * poisson.pmf(y, mu)
    return np.where(y == 0, p + (1.0 - p) * np.exp(-mu), base)


def unit_deviance(y, mu_hat, p_hat):
    """Per-observation ZIP deviance (twice the log-likelihood gap to the
    saturated model).

    y == 0: -2*log(p + (1-p)*exp(-mu))
    y >= 1:  2*(y*log(y) - y - log(1-p) - y*log(mu) + mu)

    Poisson models pass p_hat = 0.  p_hat = 1 with y >= 1 yields +inf and a
    warning (the model assigns the observation zero probability).
    """
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu_hat, dtype=np.float64)
    p = np.asarray(p_hat, dtype=np.float64)
    y, mu, p = np.broadcast_arrays(y, mu, p)
    out = np.empty(y.shape, dtype=np.float64)
    zero = y == 0
    out[zero] = -2.0 * np.log(p[zero] + (1.0 - p[zero]) * np.exp(-mu[zero]))
    pos = ~zero
    yp = y[pos]
    with np.errstate(divide="ignore"):
        log1mp = np.log(1.0 - p[pos])
    out[pos] = 2.0 * (yp * np.log(yp) - yp - log1mp - yp * np.log(mu[pos]) + mu[pos])
    if np.any(np.isinf(out[pos])):
        warnings.warn("p_hat = 1 with a positive count: infinite unit deviance")
    return out if out.ndim else float(out)


def mean_deviance(y, mu_hat, p_hat) -> float:
    """Unweighted mean of unit deviances."""
    return float(np.mean(unit_deviance(y, mu_hat, p_hat)))


def null_rate(y, w) -> float:
    """Exposure-weighted mean rate of the null model: total claims / total exposure."""
    return float(np.sum(y) / np.sum(w))


def pseudo_r2(model_deviance: float, null_deviance: float) -> float:
    """1 - D_model / D_null; zero when the model equals the null."""
    if null_deviance == 0.0:
        raise MetricError("null deviance is zero; pseudo R^2 undefined")
    return 1.0 - model_deviance / null_deviance


@dataclass
class EvalReport:
    """Deviance-based evaluation summary of one model on one dataset."""

    mean_deviance: float
    pseudo_r2: float
    n: int
    loglik: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "mean_deviance": self.mean_deviance,
            "pseudo_r2": self.pseudo_r2,
            "n": self.n,
            "total_loglik": float(np.sum(self.loglik)),
        }


def loglik_poisson(y, mu) -> np.ndarray:
    """Full normalized Poisson log-likelihood per row."""
    y = np.asarray(y, dtype=np.float64)
    mu = np.maximum(np.asarray(mu, dtype=np.float64), PROB_FLOOR)
    return y * np.log(mu) - mu - gammaln(y + 1.0)


def loglik_zip(y, mu, p) -> np.ndarray:
    """Full normalized ZIP log-likelihood per row, probabilities clamped."""
    y = np.asarray(y, dtype=np.float64)
    mu = np.maximum(np.asarray(mu, dtype=np.float64), PROB_FLOOR)
    p = np.asarray(p, dtype=np.float64)
    y, mu, p = np.broadcast_arrays(y, mu, p)
    zero_mass = np.maximum(p + (1.0 - p) * np.exp(-mu), PROB_FLOOR)
    one_minus_p = np.maximum(1.0 - p, PROB_FLOOR)
    pos = np.log(one_minus_p) + y * np.log(mu) - mu - gammaln(y + 1.0)
    return np.where(y == 0, np.log(zero_mass), pos)


@dataclass(frozen=True)
class VuongResult:
    V: float
    p_value: float
    preferred: str   # "first" | "second" | "inconclusive"

    def to_dict(self) -> dict:
        return {"V": self.V, "p_value": self.p_value, "preferred": self.preferred}


def vuong(loglik1: np.ndarray, loglik2: np.ndarray) -> VuongResult:
    """Vuong statistic for two aligned per-row log-likelihood vectors.

    V = sqrt(n) * mean(m) / sd(m) with m the per-row log-likelihood ratio and
    sd the population (1/n) standard deviation.  At the 5% level the first
    model is preferred when V > 1.96, the second when V < -1.96.  Two-sided
    normal p-value.
    """
    ll1 = np.asarray(loglik1, dtype=np.float64)
    ll2 = np.asarray(loglik2, dtype=np.float64)
    if ll1.shape != ll2.shape:
        raise MetricError("log-likelihood vectors must be aligned")
    m = ll1 - ll2
    n = m.shape[0]
    sd = float(np.sqrt(np.mean((m - np.mean(m)) ** 2)))
    if sd == 0.0:
        raise MetricError("models indistinguishable or identical: sd(m) = 0")
    V = float(np.sqrt(n) * np.mean(m) / sd)
    p_value = float(2.0 * norm.sf(abs(V)))
    if V > 1.96:
        preferred = "first"
    elif V < -1.96:
        preferred = "second"
    else:
        preferred = "inconclusive"
    return VuongResult(V=V, p_value=p_value, preferred=preferred)


def rqr(y, mu_hat, p_hat, u) -> np.ndarray:
    """Randomized quantile residuals for Poisson (p_hat = 0) and ZIP models.

    The probability integral transform takes the model CDF just below y plus
    a uniform fraction u of the probability mass at y:

        y == 0: q = u * (p + (1-p)*exp(-mu))
        y >= 1: q = p + (1-p)*PoissonCDF(y-1; mu) + u*(1-p)*PoissonPMF(y; mu)

    (the zero branch has no offset: the model CDF below 0 is 0).  A Poisson
    model is the p = 0 case.  Residuals are the standard normal quantiles of
    q, clamped away from 0 and 1, and are standard normal iff the model is
    correctly specified.
    """
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu_hat, dtype=np.float64)
    p = np.asarray(p_hat, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    y, mu, p, u = np.broadcast_arrays(y, mu, p, u)
    zero_mass = p + (1.0 - p) * np.exp(-mu)
    q_zero = u * zero_mass
    q_pos = p + (1.0 - p) * poisson.cdf(y - 1, mu) + u * (1.0 - p) * poisson.pmf(y, mu)
    q = np.clip(np.where(y == 0, q_zero, q_pos), PROB_FLOOR, 1.0 - PROB_FLOOR)
    res = norm.ppf(q)
    return res if res.ndim else float(res)


def qq_table(residuals: np.ndarray) -> np.ndarray:
    """Two columns ready for QQ plotting: theoretical normal quantile at the
    (i - 0.5)/n plotting position, sorted observed residual."""
    r = np.sort(np.asarray(residuals, dtype=np.float64))
    n = r.shape[0]
    theo = norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    return np.column_stack([theo, r])


def predict_params(model, data):
    """(mu_hat, p_hat) arrays for a boosted Model or a GlmModel."""
    from .booster import Model, predict
    from .glm import GlmModel, predict_glm

    if isinstance(model, GlmModel):
        mu = predict_glm(model, data)
        return mu, np.zeros_like(mu)
    if isinstance(model, Model):
        params = predict(model, data)
        return params.mu, params.p
    raise MetricError(f"cannot evaluate object of type {type(model).__name__}")


def evaluate(model, data) -> EvalReport:
    """EvalReport of a fitted model on a dataset.

    The null model uses the dataset's exposure-weighted mean rate; its
    inflation probability is 0.5 for ZIP models and 0 for Poisson models, and
    the log-likelihood vector retained for Vuong comparisons matches the
    model family.
    """
    mu, p = predict_params(model, data)
    is_zip = model.loss.kind in ("zipb1", "zipb2")
    d_model = mean_deviance(data.y, mu, p)
    mu_bar = data.w * null_rate(data.y, data.w)
    p_bar = 0.5 if is_zip else 0.0
    d_null = mean_deviance(data.y, mu_bar, p_bar)
    if d_null == 0.0:
        # degenerate slice (e.g. an all-zero CV fold): deviance is still
        # meaningful, the improvement ratio is not
        warnings.warn("null deviance is zero; pseudo R^2 undefined for this data")
        r2 = float("nan")
    else:
        r2 = pseudo_r2(d_model, d_null)
    ll = loglik_zip(data.y, mu, p) if is_zip else loglik_poisson(data.y, mu)
    return EvalReport(mean_deviance=d_model, pseudo_r2=r2, n=data.n_rows, loglik=ll)
