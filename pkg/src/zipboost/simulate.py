"""Synthetic zero-inflated claim generator.

Draws five uniform features x0..x4, a mean surface mu from a --mu-spec, an
inflation probability from a --p-spec, then y as a structural zero with
probability p and Poisson(mu) otherwise.  This is the controllable ground
truth behind the simulation-based tests.

mu specs:
    "const:<rate>"  constant mean rate
    "tree2"         a fixed depth-2 step function of (x0, x1); the four cells
                    carry log-rates -1.0, -0.3, 0.2, 0.8

p specs:
    "none"               p = 0 (pure Poisson)
    "linked:<gamma>"       p = 1 / (1 + mu**gamma), tied to the mean
    "independent:<p>"    constant p, unrelated to the features
"""

from __future__ import annotations

import numpy as np

from .data import Dataset, Schema
from .losses import zipb1_p_of_mu

TREE2_SCORES = (-1.0, -0.3, 0.2, 0.8)
N_FEATURES = 5


def tree2_score(x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
    """Fixed depth-2 step surface over the unit square."""
    cell = 2 * (x0 > 0.5).astype(np.int64) + (x1 > 0.5).astype(np.int64)
    return np.asarray(TREE2_SCORES)[cell]


def parse_mu_spec(spec: str):
    if spec == "tree2":
        return lambda x: np.exp(tree2_score(x[:, 0], x[:, 1]))
    if spec.startswith("const:"):
        rate = float(spec.split(":", 1)[1])
        if rate <= 0:
            raise ValueError("const mu spec needs a positive rate")
        return lambda x: np.full(x.shape[0], rate)
    raise ValueError(f"unknown mu spec {spec!r}")


def parse_p_spec(spec: str):
    if spec == "none":
        return lambda mu: np.zeros_like(mu)
    if spec.startswith("linked:"):
        gamma = float(spec.split(":", 1)[1])
        if gamma <= 0:
            raise ValueError("linked p spec needs gamma > 0")
        return lambda mu: zipb1_p_of_mu(mu, gamma)
    if spec.startswith("independent:"):
        p = float(spec.split(":", 1)[1])
        if not 0.0 <= p <= 1.0:
            raise ValueError("independent p spec needs p in [0, 1]")
        return lambda mu: np.full_like(mu, p)
    raise ValueError(f"unknown p spec {spec!r}")


def simulate(n: int, mu_spec: str, p_spec: str, seed: int):
    """Returns (Dataset, mu, p) with unit exposures.

    mu and p are the generating values per row, handy for oracle checks.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    mu_fn = parse_mu_spec(mu_spec)
    p_fn = parse_p_spec(p_spec)
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(n, N_FEATURES))
    mu = mu_fn(x)
    p = p_fn(mu)
    structural = rng.uniform(size=n) < p
    y = np.where(structural, 0, rng.poisson(mu))
    data = Dataset(y=y.astype(np.int64), w=np.ones(n),
                   numeric={f"x{i}": x[:, i] for i in range(N_FEATURES)})
    return data, mu, p


def simulation_schema(max_bins: int = 255, seed: int = 0) -> Schema:
    """Schema matching the generator's output columns."""
    return Schema(
        response_column="y",
        exposure_column="w",
        feature_columns=tuple((f"x{i}", "numeric") for i in range(N_FEATURES)),
        max_bins=max_bins,
        seed=seed,
    )


def write_csv(data: Dataset, path) -> None:
    """Write a simulated Dataset as an RFC-4180 CSV with header."""
    import csv

    names = list(data.numeric)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + ["w", "y"])
        cols = [data.numeric[n] for n in names]
        for i in range(data.n_rows):
            writer.writerow([repr(float(c[i])) for c in cols]
                            + [repr(float(data.w[i])), int(data.y[i])])
