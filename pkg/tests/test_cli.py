import json
import re

import numpy as np
import pytest
from click.testing import CliRunner

from zipboost.cli import main, substream_seed


@pytest.fixture()
def runner():
    return CliRunner()


def run(runner, *args, expect=0):
    result = runner.invoke(main, list(args), catch_exceptions=False)
    assert result.exit_code == expect, result.output
    return result


def simulate_files(runner, n=800, p_spec="linked:2", seed=42, prefix="sim"):
    run(runner, "simulate", "--n", str(n), "--mu-spec", "tree2",
        "--p-spec", p_spec, "--seed", str(seed), "--out", f"{prefix}.csv")
    return f"{prefix}.csv", f"{prefix}.csv.schema.json"


class TestSimulate:
    def test_no_inflation_reduces_to_poisson_mean(self, runner):
        with runner.isolated_filesystem():
            csv_path, _ = simulate_files(runner, n=20000, p_spec="none", seed=1)
            rows = np.loadtxt(csv_path, delimiter=",", skiprows=1)
            y = rows[:, -1]
            x0, x1 = rows[:, 0], rows[:, 1]
            from zipboost.simulate import tree2_score
            mu = np.exp(tree2_score(x0, x1))
            se = np.sqrt(mu.mean() / len(y))   # Poisson mixture variance proxy
            assert abs(y.mean() - mu.mean()) < 3 * np.sqrt(y.var() / len(y)) + 3 * se

    def test_full_inflation_all_zero(self, runner):
        with runner.isolated_filesystem():
            csv_path, _ = simulate_files(runner, n=500, p_spec="independent:1.0")
            rows = np.loadtxt(csv_path, delimiter=",", skiprows=1)
            assert np.all(rows[:, -1] == 0)

    def test_linked_inflation_curve_reproduced_empirically(self, runner):
        # bin rows by cell of the generating step function; empirical zero
        # share must match p + (1-p)exp(-mu) within binomial error
        with runner.isolated_filesystem():
            csv_path, _ = simulate_files(runner, n=40000, p_spec="linked:2", seed=3)
            rows = np.loadtxt(csv_path, delimiter=",", skiprows=1)
            y = rows[:, -1]
            from zipboost.simulate import TREE2_SCORES, tree2_score
            scores = tree2_score(rows[:, 0], rows[:, 1])
            for s in TREE2_SCORES:
                mask = scores == s
                mu = np.exp(s)
                p = 1.0 / (1.0 + mu**2)
                expected = p + (1 - p) * np.exp(-mu)
                observed = (y[mask] == 0).mean()
                se = np.sqrt(expected * (1 - expected) / mask.sum())
                assert abs(observed - expected) < 4 * se

    def test_invalid_spec_usage_error(self, runner):
        with runner.isolated_filesystem():
            result = runner.invoke(main, ["simulate", "--n", "10", "--p-spec", "bogus",
                                          "--out", "x.csv"])
            assert result.exit_code == 2
            result = runner.invoke(main, ["simulate", "--n", "0", "--out", "x.csv"])
            assert result.exit_code == 2

    def test_writes_schema_and_manifest(self, runner):
        with runner.isolated_filesystem():
            csv_path, schema_path = simulate_files(runner, n=50)
            schema = json.loads(open(schema_path).read())
            assert schema["response_column"] == "y"
            manifest = json.loads(open(csv_path + ".manifest.json").read())
            assert manifest["command"] == "simulate"
            assert manifest["tool_version"]


class TestTrain:
    def test_writes_model_and_manifest(self, runner):
        with runner.isolated_filesystem():
            csv_path, schema_path = simulate_files(runner, n=300)
            run(runner, "train", "--data", csv_path, "--schema", schema_path,
                "--loss", "zipb1", "--gamma", "5", "--trees", "10", "--depth", "3",
                "--seed", "1", "--out", "m.json")
            doc = json.loads(open("m.json").read())
            assert doc["kind"] == "zipb1" and doc["gamma"] == 5.0
            manifest = json.loads(open("m.json.manifest.json").read())
            assert csv_path in manifest["inputs"]
            assert re.fullmatch(r"[0-9a-f]{64}", manifest["inputs"][csv_path])

    def test_training_defaults(self, runner):
        with runner.isolated_filesystem():
            csv_path, schema_path = simulate_files(runner, n=60)
            run(runner, "train", "--data", csv_path, "--schema", schema_path,
                "--loss", "poisson", "--out", "m.json")
            doc = json.loads(open("m.json").read())
            assert doc["config"]["n_trees"] == 500
            assert doc["config"]["max_depth"] == 8
            assert len(doc["trees_po"]) == 500

    def test_gamma_flag_contract(self, runner):
        with runner.isolated_filesystem():
            csv_path, schema_path = simulate_files(runner, n=50)
            result = runner.invoke(main, ["train", "--data", csv_path, "--schema",
                                          schema_path, "--loss", "zipb2", "--gamma", "5",
                                          "--out", "m.json"])
            assert result.exit_code == 2
            result = runner.invoke(main, ["train", "--data", csv_path, "--schema",
                                          schema_path, "--loss", "zipb1", "--out", "m.json"])
            assert result.exit_code == 2

    def test_data_validation_failure_exits_one(self, runner, tmp_path):
        with runner.isolated_filesystem():
            with open("bad.csv", "w") as fh:
                fh.write("x0,x1,x2,x3,x4,w,y\n0,0,0,0,0,1.0,-3\n")
            _, schema_path = simulate_files(runner, n=10)
            result = runner.invoke(main, ["train", "--data", "bad.csv", "--schema",
                                          schema_path, "--loss", "poisson",
                                          "--trees", "2", "--out", "m.json"])
            assert result.exit_code == 1
            assert "row 0" in result.output

    def test_byte_identical_reruns(self, runner):
        with runner.isolated_filesystem():
            csv_path, schema_path = simulate_files(runner, n=200)
            for out in ("m1.json", "m2.json"):
                run(runner, "train", "--data", csv_path, "--schema", schema_path,
                    "--loss", "poisson", "--trees", "8", "--depth", "3",
                    "--seed", "9", "--out", out)
            assert open("m1.json", "rb").read() == open("m2.json", "rb").read()


class TestPredict:
    def test_output_columns_and_expected_count(self, runner):
        with runner.isolated_filesystem():
            csv_path, schema_path = simulate_files(runner, n=200)
            run(runner, "train", "--data", csv_path, "--schema", schema_path,
                "--loss", "zipb1", "--gamma", "2", "--trees", "8", "--depth", "3",
                "--seed", "1", "--out", "m.json")
            run(runner, "predict", "--model", "m.json", "--data", csv_path,
                "--out", "pred.csv")
            with open("pred.csv") as fh:
                header = fh.readline().strip().split(",")
                assert header == ["row", "mu_hat", "p_hat", "expected_count"]
                rows = np.loadtxt(fh, delimiter=",")
            assert rows.shape == (200, 4)
            np.testing.assert_allclose(rows[:, 3], (1 - rows[:, 2]) * rows[:, 1],
                                       atol=1e-12)

    def test_round_trip_deterministic(self, runner):
        with runner.isolated_filesystem():
            csv_path, schema_path = simulate_files(runner, n=100)
            run(runner, "train", "--data", csv_path, "--schema", schema_path,
                "--loss", "poisson", "--trees", "5", "--depth", "2", "--seed", "1",
                "--out", "m.json")
            run(runner, "predict", "--model", "m.json", "--data", csv_path, "--out", "p1.csv")
            run(runner, "predict", "--model", "m.json", "--data", csv_path, "--out", "p2.csv")
            assert open("p1.csv", "rb").read() == open("p2.csv", "rb").read()

    def test_schema_mismatch_exits_one(self, runner):
        with runner.isolated_filesystem():
            csv_path, schema_path = simulate_files(runner, n=50)
            run(runner, "train", "--data", csv_path, "--schema", schema_path,
                "--loss", "poisson", "--trees", "2", "--depth", "2", "--seed", "1",
                "--out", "m.json")
            with open("other.csv", "w") as fh:
                fh.write("a,b,y\n1,2,0\n")
            result = runner.invoke(main, ["predict", "--model", "m.json",
                                          "--data", "other.csv", "--out", "p.csv"])
            assert result.exit_code == 1


class TestEvaluate:
    def test_rqr_row_count_and_reproducibility(self, runner):
        with runner.isolated_filesystem():
            csv_path, schema_path = simulate_files(runner, n=150)
            run(runner, "train", "--data", csv_path, "--schema", schema_path,
                "--loss", "poisson", "--trees", "5", "--depth", "2", "--seed", "1",
                "--out", "m.json")
            run(runner, "evaluate", "--model", "m.json", "--data", csv_path,
                "--seed", "3", "--out", "r1.json")
            run(runner, "evaluate", "--model", "m.json", "--data", csv_path,
                "--seed", "3", "--out", "r2.json")
            assert open("r1.json", "rb").read() == open("r2.json", "rb").read()
            assert open("r1.json.rqr.csv", "rb").read() == open("r2.json.rqr.csv", "rb").read()
            assert len(open("r1.json.rqr.csv").readlines()) == 151  # header + rows
            report = json.loads(open("r1.json").read())
            assert {"mean_deviance", "pseudo_r2", "n", "total_loglik"} <= set(report)

    def test_intercept_equivalent_model_scores_zero(self, runner):
        # claims with unit mean and a constant feature: every tree stays a
        # zero leaf, so the model equals the null model exactly
        with runner.isolated_filesystem():
            with open("flat.csv", "w") as fh:
                fh.write("x,w,y\n")
                for y in [0, 1, 2, 1, 0, 2]:
                    fh.write(f"1.0,1.0,{y}\n")
            schema = {"response_column": "y", "exposure_column": "w",
                      "features": [{"name": "x", "kind": "numeric"}]}
            with open("flat.schema.json", "w") as fh:
                json.dump(schema, fh)
            run(runner, "train", "--data", "flat.csv", "--schema", "flat.schema.json",
                "--loss", "poisson", "--trees", "3", "--depth", "2", "--seed", "0",
                "--out", "m.json")
            run(runner, "evaluate", "--model", "m.json", "--data", "flat.csv",
                "--out", "r.json")
            assert json.loads(open("r.json").read())["pseudo_r2"] == pytest.approx(0.0, abs=1e-12)


class TestCompare:
    def setup_models(self, runner, n=4000):
        csv_path, schema_path = simulate_files(runner, n=n, p_spec="independent:0.6", seed=5)
        run(runner, "train", "--data", csv_path, "--schema", schema_path,
            "--loss", "zipb2", "--trees", "40", "--depth", "2", "--seed", "1",
            "--out", "zip.json")
        run(runner, "train", "--data", csv_path, "--schema", schema_path,
            "--loss", "poisson", "--trees", "40", "--depth", "2", "--seed", "1",
            "--out", "pb.json")
        return csv_path

    def test_zip_preferred_on_inflated_data(self, runner):
        with runner.isolated_filesystem():
            csv_path = self.setup_models(runner)
            result = run(runner, "compare", "--model-a", "zip.json",
                         "--model-b", "pb.json", "--data", csv_path)
            doc = json.loads(result.output)
            assert doc["preferred"] == "first"
            assert doc["V"] > 1.96

    def test_antisymmetric_under_swap(self, runner):
        with runner.isolated_filesystem():
            csv_path = self.setup_models(runner, n=1000)
            r1 = run(runner, "compare", "--model-a", "zip.json", "--model-b", "pb.json",
                     "--data", csv_path)
            r2 = run(runner, "compare", "--model-a", "pb.json", "--model-b", "zip.json",
                     "--data", csv_path)
            v1 = json.loads(r1.output)["V"]
            v2 = json.loads(r2.output)["V"]
            assert v1 == -v2

    def test_identical_models_exit_one(self, runner):
        with runner.isolated_filesystem():
            csv_path, schema_path = simulate_files(runner, n=100)
            run(runner, "train", "--data", csv_path, "--schema", schema_path,
                "--loss", "poisson", "--trees", "3", "--depth", "2", "--seed", "1",
                "--out", "m.json")
            result = runner.invoke(main, ["compare", "--model-a", "m.json",
                                          "--model-b", "m.json", "--data", csv_path])
            assert result.exit_code == 1
            assert "indistinguishable" in result.output


class TestCv:
    def test_holdout_disjoint_and_seeded(self, runner):
        with runner.isolated_filesystem():
            csv_path, schema_path = simulate_files(runner, n=300)
            grid = {"alpha": [0.2], "lambda": [0.0]}
            with open("grid.json", "w") as fh:
                json.dump(grid, fh)
            for out in ("cv1.json", "cv2.json"):
                run(runner, "cv", "--data", csv_path, "--schema", schema_path,
                    "--loss", "poisson", "--grid-file", "grid.json", "--trees", "5",
                    "--depth", "2", "--seed", "11", "--out", out)
            d1 = json.loads(open("cv1.json").read())
            d2 = json.loads(open("cv2.json").read())
            assert d1["holdout_rows"] == d2["holdout_rows"]
            assert len(d1["holdout_rows"]) == 60
            assert d1["best"] == {"learning_rate": 0.2, "l2_penalty": 0.0}
            assert len(d1["folds"]) == 1 and len(d1["folds"][0]) == 3

    def test_grid_of_two_selects_argmin(self, runner):
        with runner.isolated_filesystem():
            csv_path, schema_path = simulate_files(runner, n=400)
            grid = {"alpha": [0.001, 0.3], "lambda": [0.0]}
            with open("grid.json", "w") as fh:
                json.dump(grid, fh)
            run(runner, "cv", "--data", csv_path, "--schema", schema_path,
                "--loss", "poisson", "--grid-file", "grid.json", "--trees", "10",
                "--depth", "2", "--seed", "2", "--out", "cv.json")
            doc = json.loads(open("cv.json").read())
            assert doc["best"]["learning_rate"] == 0.3
            assert doc["n_candidates"] == 2


class TestExplainCommand:
    def test_single_split_table(self, runner):
        with runner.isolated_filesystem():
            # x0 is the only informative feature at depth 1
            csv_path, schema_path = simulate_files(runner, n=2000, p_spec="none", seed=6)
            run(runner, "train", "--data", csv_path, "--schema", schema_path,
                "--loss", "poisson", "--trees", "1", "--depth", "1", "--seed", "1",
                "--out", "m.json")
            result = run(runner, "explain", "--model", "m.json", "--top-k", "3")
            assert "feature importance [mu]" in result.output
            first_row = result.output.splitlines()[1].split()
            assert float(first_row[1]) == pytest.approx(100.0)

    def test_topk_larger_than_features_and_export(self, runner):
        with runner.isolated_filesystem():
            csv_path, schema_path = simulate_files(runner, n=500, p_spec="none", seed=7)
            run(runner, "train", "--data", csv_path, "--schema", schema_path,
                "--loss", "poisson", "--trees", "5", "--depth", "3", "--seed", "1",
                "--out", "m.json")
            run(runner, "explain", "--model", "m.json", "--top-k", "100",
                "--out", "tables")
            doc = json.loads(open("tables.json").read())
            assert len(doc["importance"]["mu"]) == 5
            lines = open("tables.csv").readlines()
            assert lines[0].startswith("table,ensemble,feature,score")


class TestSeedStreams:
    def test_substreams_are_distinct_and_stable(self):
        seeds = {name: substream_seed(123, name) for name in ("split", "ts", "rqr", "simulation")}
        assert len(set(seeds.values())) == 4
        assert seeds == {name: substream_seed(123, name)
                         for name in ("split", "ts", "rqr", "simulation")}

    def test_env_seed_override(self, runner):
        with runner.isolated_filesystem():
            result = runner.invoke(main, ["simulate", "--n", "40", "--out", "a.csv"],
                                   env={"ZIPBOOST_SEED": "777"}, catch_exceptions=False)
            assert result.exit_code == 0
            result = runner.invoke(main, ["simulate", "--n", "40", "--seed", "777",
                                          "--out", "b.csv"], catch_exceptions=False)
            assert result.exit_code == 0
            assert open("a.csv", "rb").read() == open("b.csv", "rb").read()
            manifest = json.loads(open("a.csv.manifest.json").read())
            assert manifest["seed"] == 777
