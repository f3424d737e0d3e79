"""Batch command-line surface: train, predict, evaluate, compare, cv,
explain, simulate.

Exit codes: 0 success, 1 data/model error, 2 usage error.  Every
artifact-producing command writes a run manifest next to its main output.
All randomness flows from --seed through named sub-streams so components are
independently reproducible; ZIPBOOST_SEED and ZIPBOOST_THREADS provide
environment overrides.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import sys
import time

import click
import numpy as np

from . import __version__
from .booster import BoostConfig, Model, cross_validate, default_search_grid, fit_any, predict
from .data import Schema, load_csv
from .errors import MetricError, ZipboostError
from .explain import feature_importance, interaction_strength, top_k
from .glm import GlmModel
from .losses import LossSpec
from .metrics import evaluate, qq_table, rqr, vuong
from .simulate import simulate, simulation_schema, write_csv

SEED_STREAMS = {"split": 0, "ts": 1, "rqr": 2, "simulation": 3}


def substream_seed(master: int, stream: str) -> int:
    """Deterministic, platform-independent child seed for a named stream."""
    ss = np.random.SeedSequence(master, spawn_key=(SEED_STREAMS[stream],))
    return int(ss.generate_state(1)[0])


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_path, command: str, config: dict, inputs: list, seed, started: float):
    manifest = {
        "schema_version": 1,
        "command": command,
        "tool_version": __version__,
        "seed": seed,
        "config": config,
        "inputs": {str(p): _sha256_file(p) for p in inputs},
        "duration_s": time.time() - started,
    }
    path = os.fspath(out_path) + ".manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _load_any_model(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("kind") == "poisson_glm":
        return GlmModel.from_dict(doc)
    return Model.from_dict(doc)


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


@click.group()
@click.version_option(version=__version__)
def main():
    """Boosted zero-inflated Poisson claim-frequency modeling."""
    threads = os.environ.get("ZIPBOOST_THREADS")
    if threads:
        import numba
        numba.set_num_threads(int(threads))


def _seed_default() -> int:
    return int(os.environ.get("ZIPBOOST_SEED", "0"))


@main.command()
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--schema", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--loss", type=click.Choice(["poisson", "zipb1", "zipb2"]), required=True)
@click.option("--gamma", type=float, default=None, help="Inflation exponent (zipb1 only).")
@click.option("--alpha", type=float, default=0.1, show_default=True, help="Learning rate.")
@click.option("--lambda", "l2_penalty", type=float, default=0.0, show_default=True,
              help="L2 leaf penalty.")
@click.option("--depth", type=int, default=8, show_default=True)
@click.option("--trees", type=int, default=500, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
def train(data_path, schema_path, loss, gamma, alpha, l2_penalty, depth, trees, seed, out_path):
    """Fit a model and write it as versioned JSON."""
    started = time.time()
    if loss == "zipb1" and gamma is None:
        raise click.UsageError("--gamma is required for --loss zipb1")
    if loss != "zipb1" and gamma is not None:
        raise click.UsageError(f"--gamma is not valid for --loss {loss}")
    if seed is None:
        seed = _seed_default()
    try:
        schema = Schema.from_json_file(schema_path)
        # the master seed drives the target-statistic permutation sub-stream
        schema = Schema.from_dict({**schema.to_dict(), "seed": substream_seed(seed, "ts")})
        dataset = load_csv(data_path, schema)
        spec = LossSpec(kind=loss, gamma=gamma)
        config = BoostConfig(n_trees=trees, learning_rate=alpha, l2_penalty=l2_penalty,
                             max_depth=depth, seed=seed)
        model = fit_any(dataset, schema, spec, config)
        model.save(out_path)
    except ZipboostError as exc:
        _fail(str(exc))
    except ValueError as exc:
        raise click.UsageError(str(exc))
    _write_manifest(out_path, "train",
                    {"loss": loss, "gamma": gamma, "alpha": alpha, "lambda": l2_penalty,
                     "depth": depth, "trees": trees},
                    [data_path, schema_path], seed, started)
    click.echo(f"wrote {out_path}")


@main.command("predict")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def predict_cmd(model_path, data_path, out_path):
    """Write per-row predictions: row, mu_hat, p_hat, expected_count."""
    started = time.time()
    try:
        model = _load_any_model(model_path)
        dataset = load_csv(data_path, model.schema)
        if isinstance(model, GlmModel):
            from .glm import predict_glm
            mu = predict_glm(model, dataset)
            p = np.zeros_like(mu)
        else:
            params = predict(model, dataset)
            mu, p = params.mu, params.p
    except ZipboostError as exc:
        _fail(str(exc))
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "mu_hat", "p_hat", "expected_count"])
        for i in range(len(mu)):
            writer.writerow([i, repr(float(mu[i])), repr(float(p[i])),
                             repr(float((1.0 - p[i]) * mu[i]))])
    _write_manifest(out_path, "predict", {}, [model_path, data_path], None, started)
    click.echo(f"wrote {out_path}")


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Seed of the residual uniforms.")
@click.option("--out", "out_path", required=True, type=click.Path())
def evaluate_cmd(model_path, data_path, seed, out_path):
    """Write an evaluation report (JSON) plus a QQ-ready residual CSV."""
    started = time.time()
    if seed is None:
        seed = _seed_default()
    try:
        model = _load_any_model(model_path)
        dataset = load_csv(data_path, model.schema)
        report = evaluate(model, dataset)
        from .metrics import predict_params
        mu, p = predict_params(model, dataset)
        rng = np.random.default_rng(substream_seed(seed, "rqr"))
        residuals = rqr(dataset.y, mu, p, rng.uniform(size=dataset.n_rows))
    except ZipboostError as exc:
        _fail(str(exc))
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump({"schema_version": 1, **report.to_dict()}, fh, indent=2, sort_keys=True)
    rqr_path = os.fspath(out_path) + ".rqr.csv"
    with open(rqr_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theoretical_quantile", "residual"])
        for theo, obs in qq_table(residuals):
            writer.writerow([repr(float(theo)), repr(float(obs))])
    _write_manifest(out_path, "evaluate", {}, [model_path, data_path], seed, started)
    click.echo(f"wrote {out_path} and {rqr_path}")


@main.command()
@click.option("--model-a", "model_a", required=True, type=click.Path(exists=True))
@click.option("--model-b", "model_b", required=True, type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", default=None, type=click.Path())
def compare(model_a, model_b, data_path, out_path):
    """Vuong test of model A (first) against model B (second)."""
    started = time.time()
    try:
        ma = _load_any_model(model_a)
        mb = _load_any_model(model_b)
        dataset = load_csv(data_path, ma.schema)
        ra = evaluate(ma, dataset)
        rb = evaluate(mb, dataset)
        result = vuong(ra.loglik, rb.loglik)
    except (ZipboostError, MetricError) as exc:
        _fail(str(exc))
    doc = {"schema_version": 1, **result.to_dict()}
    click.echo(json.dumps(doc, indent=2, sort_keys=True))
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
        _write_manifest(out_path, "compare", {}, [model_a, model_b, data_path], None, started)


@main.command()
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--schema", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--loss", type=click.Choice(["poisson", "zipb1", "zipb2"]), required=True)
@click.option("--grid-file", "grid_path", default=None, type=click.Path(exists=True),
              help="JSON {alpha: [...], lambda: [...], gamma: [...]}; defaults to the standard grid.")
@click.option("--folds", type=int, default=3, show_default=True)
@click.option("--holdout", type=float, default=0.2, show_default=True)
@click.option("--trees", type=int, default=500, show_default=True)
@click.option("--depth", type=int, default=8, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
def cv(data_path, schema_path, loss, grid_path, folds, holdout, trees, depth, seed, out_path):
    """Grid search over a seeded holdout/fold split; write the best config."""
    started = time.time()
    if seed is None:
        seed = _seed_default()
    try:
        schema = Schema.from_json_file(schema_path)
        schema = Schema.from_dict({**schema.to_dict(), "seed": substream_seed(seed, "ts")})
        dataset = load_csv(data_path, schema)
        if grid_path:
            with open(grid_path, "r", encoding="utf-8") as fh:
                g = json.load(fh)
            grid = default_search_grid(
                loss,
                alphas=tuple(g.get("alpha", (0.01, 0.05, 0.1))),
                lambdas=tuple(g.get("lambda", (0.0, 100.0, 200.0, 300.0, 400.0, 500.0))),
                gammas=tuple(g.get("gamma", (1.0, 5.0, 10.0, 50.0, 100.0, 500.0))),
            )
        else:
            grid = default_search_grid(loss)
        split_rng = np.random.default_rng(substream_seed(seed, "split"))
        perm = split_rng.permutation(dataset.n_rows)
        n_holdout = int(round(holdout * dataset.n_rows))
        holdout_idx = np.sort(perm[:n_holdout])
        train_idx = np.sort(perm[n_holdout:])
        best, fold_table = cross_validate(
            dataset.take(train_idx), schema, loss, grid,
            config_base=BoostConfig(n_trees=trees, max_depth=depth, seed=seed),
            n_folds=folds, seed=substream_seed(seed, "split"))
    except ZipboostError as exc:
        _fail(str(exc))
    doc = {
        "schema_version": 1,
        "best": best,
        "n_candidates": len(grid),
        "holdout_rows": holdout_idx.tolist(),
        "folds": [[r.to_dict() for r in reports] for reports in fold_table],
    }
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    _write_manifest(out_path, "cv",
                    {"loss": loss, "folds": folds, "holdout": holdout,
                     "trees": trees, "depth": depth},
                    [data_path, schema_path], seed, started)
    click.echo(f"best: {json.dumps(best, sort_keys=True)}")


@main.command("explain")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--top-k", "k", type=int, default=10, show_default=True)
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Prefix for CSV/JSON table exports.")
def explain_cmd(model_path, k, out_path):
    """Print top-k feature importance and interaction strength."""
    started = time.time()
    try:
        model = _load_any_model(model_path)
        if isinstance(model, GlmModel):
            _fail("explain supports boosted models only")
        importances = feature_importance(model)
        interactions = interaction_strength(model)
    except ZipboostError as exc:
        _fail(str(exc))
    for ensemble, table in importances.items():
        click.echo(f"feature importance [{ensemble}]")
        for name, score in top_k(table, k):
            click.echo(f"  {name}\t{score:.6f}")
    for ensemble, table in interactions.items():
        click.echo(f"interaction strength [{ensemble}]")
        for pair, score in top_k(table, k):
            click.echo(f"  {pair[0]}:{pair[1]}\t{score:.6f}")
    if out_path:
        doc = {
            "schema_version": 1,
            "importance": importances,
            "interaction": {ens: {f"{a}:{b}": v for (a, b), v in tab.items()}
                            for ens, tab in interactions.items()},
        }
        json_path = os.fspath(out_path) + ".json"
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
        csv_path = os.fspath(out_path) + ".csv"
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["table", "ensemble", "feature", "score"])
            for ens, tab in importances.items():
                for name, score in top_k(tab, len(tab)):
                    writer.writerow(["importance", ens, name, repr(score)])
            for ens, tab in interactions.items():
                for pair, score in top_k(tab, len(tab)):
                    writer.writerow(["interaction", ens, f"{pair[0]}:{pair[1]}", repr(score)])
        _write_manifest(json_path, "explain", {"top_k": k}, [model_path], None, started)


@main.command("simulate")
@click.option("--n", type=int, required=True)
@click.option("--mu-spec", default="tree2", show_default=True)
@click.option("--p-spec", default="none", show_default=True,
              help="none | linked:<gamma> | independent:<p>")
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
def simulate_cmd(n, mu_spec, p_spec, seed, out_path):
    """Generate a synthetic zero-inflated claim CSV plus a matching schema."""
    started = time.time()
    if seed is None:
        seed = _seed_default()
    if n < 1:
        raise click.UsageError("--n must be at least 1")
    try:
        data, _, _ = simulate(n, mu_spec, p_spec, substream_seed(seed, "simulation"))
    except ValueError as exc:
        raise click.UsageError(str(exc))
    write_csv(data, out_path)
    schema_path = os.fspath(out_path) + ".schema.json"
    with open(schema_path, "w", encoding="utf-8") as fh:
        json.dump(simulation_schema().to_dict(), fh, indent=2, sort_keys=True)
    _write_manifest(out_path, "simulate", {"n": n, "mu_spec": mu_spec, "p_spec": p_spec},
                    [], seed, started)
    click.echo(f"wrote {out_path} and {schema_path}")


if __name__ == "__main__":
    main()
