import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from click.testing import CliRunner

from cthazard.checkpoint import load_checkpoint, save_checkpoint
from cthazard.cli import cli
from cthazard.data import Dataset, Feature, load_csv, load_schema, schema_of, write_csv, write_schema
from cthazard.metrics import MetricReport
from cthazard.model import HazardNetwork, survival_at

from conftest import brute_force_brier, brute_force_ctd


@pytest.fixture
def runner():
    return CliRunner()


def run_ok(runner, args):
    result = runner.invoke(cli, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


def identity_on_x_network():
    """Raw-encoder net whose single-risk hazard is softplus(x1), time-constant."""
    net = HazardNetwork(1, 1, (2, 2), "raw", rng=np.random.default_rng(0))
    for p in net.params:
        p.value[...] = 0.0
    net.params["bn1.gamma"].value[...] = np.sqrt(1.0 + net.bn1.eps)
    net.params["bn2.gamma"].value[...] = np.sqrt(1.0 + net.bn2.eps)
    net.params["layer1.weight"].value[...] = np.array([[1.0, -1.0], [0.0, 0.0]])
    net.params["layer2.weight"].value[...] = np.array(
        [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]]
    )
    net.params["head.weight"].value[...] = np.array([[1.0], [-1.0]])
    return net


def constant_hazard_network(covariates=1, risks=1):
    net = HazardNetwork(covariates, risks, (2, 2), "raw", rng=np.random.default_rng(0))
    for p in net.params:
        p.value[...] = 0.0
    return net  # softplus(0) = ln 2 per risk, independent of inputs


def write_dataset(tmp_path, xs, times, labels, name="data"):
    ds = Dataset([Feature("x1", "numeric", np.asarray(xs, dtype=float))],
                 np.asarray(times, dtype=float), np.asarray(labels))
    data = tmp_path / f"{name}.csv"
    schema = tmp_path / f"{name}.schema.json"
    write_csv(ds, data)
    write_schema(schema_of(ds), schema)
    return data, schema


class TestSimulate:
    def test_competing_columns_and_rows(self, runner, tmp_path):
        out = tmp_path / "c.csv"
        run_ok(runner, ["simulate", "--kind", "competing", "--n", "120", "--seed", "1",
                        "--out", str(out)])
        loaded = load_csv(out, load_schema(tmp_path / "c.schema.json"))
        assert loaded.n == 120
        assert len(loaded.features) == 20

    def test_single_row_file(self, runner, tmp_path):
        out = tmp_path / "one.csv"
        run_ok(runner, ["simulate", "--kind", "nonlinear", "--n", "1", "--seed", "2",
                        "--out", str(out)])
        assert load_csv(out, load_schema(tmp_path / "one.schema.json")).n == 1

    def test_same_seed_byte_identical(self, runner, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run_ok(runner, ["simulate", "--kind", "nonlinear", "--n", "40", "--seed", "7", "--out", str(a)])
        run_ok(runner, ["simulate", "--kind", "nonlinear", "--n", "40", "--seed", "7", "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_output_parsable_by_own_loader(self, runner, tmp_path):
        out = tmp_path / "d.csv"
        run_ok(runner, ["simulate", "--kind", "nonlinear", "--n", "25", "--seed", "3", "--out", str(out)])
        ds = load_csv(out, load_schema(tmp_path / "d.schema.json"))
        assert ds.risks == 1 and ds.n == 25


class TestTrain:
    def config(self, tmp_path, **overrides):
        cfg = {"max_epochs": 3, "patience": 3, "batch_size": 16, "grid_points": 6,
               "hidden": [4, 4], "embed_dim": 4, "seed": 11, **overrides}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        return path

    def test_writes_checkpoint_log_figure_manifest(self, runner, tmp_path):
        data = tmp_path / "d.csv"
        run_ok(runner, ["simulate", "--kind", "nonlinear", "--n", "60", "--seed", "5", "--out", str(data)])
        model = tmp_path / "model.json"
        run_ok(runner, ["train", "--data", str(data), "--schema", str(tmp_path / "d.schema.json"),
                        "--config", str(self.config(tmp_path)), "--out", str(model)])
        assert model.exists()
        assert (tmp_path / "model.training_log.csv").exists()
        assert (tmp_path / "model.training_log.png").exists()
        assert (tmp_path / "model.manifest.json").exists()
        net, grid_points, stats = load_checkpoint(model)
        assert grid_points == 6
        assert stats is not None and len(stats.numeric) == 10

    def test_minimal_two_point_grid_trains(self, runner, tmp_path):
        data = tmp_path / "d.csv"
        run_ok(runner, ["simulate", "--kind", "nonlinear", "--n", "40", "--seed", "6", "--out", str(data)])
        model = tmp_path / "m.json"
        run_ok(runner, ["train", "--data", str(data), "--schema", str(tmp_path / "d.schema.json"),
                        "--config", str(self.config(tmp_path)), "--m", "2", "--out", str(model)])
        _, grid_points, _ = load_checkpoint(model)
        assert grid_points == 2

    def test_missing_schema_names_path(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "cthazard.cli", "train", "--data", "x.csv",
             "--schema", str(tmp_path / "missing.schema.json"), "--out", str(tmp_path / "m.json")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 1
        assert "missing.schema.json" in proc.stderr

    def test_rerun_byte_identical(self, runner, tmp_path):
        data = tmp_path / "d.csv"
        run_ok(runner, ["simulate", "--kind", "nonlinear", "--n", "50", "--seed", "8", "--out", str(data)])
        cfg = self.config(tmp_path)
        m1, m2 = tmp_path / "m1.json", tmp_path / "m2.json"
        for m in (m1, m2):
            run_ok(runner, ["train", "--data", str(data), "--schema", str(tmp_path / "d.schema.json"),
                            "--config", str(cfg), "--out", str(m)])
        assert m1.read_bytes() == m2.read_bytes()
        assert (tmp_path / "m1.training_log.csv").read_bytes() == (tmp_path / "m2.training_log.csv").read_bytes()
        assert (tmp_path / "m1.training_log.png").read_bytes() == (tmp_path / "m2.training_log.png").read_bytes()


class TestEvaluate:
    def test_perfect_oracle_scores_one(self, runner, tmp_path):
        model = tmp_path / "m.json"
        save_checkpoint(model, identity_on_x_network(), grid_points=20)
        data, schema = write_dataset(tmp_path, xs=[3.0, 2.0, 1.0, 0.0],
                                     times=[1.0, 2.0, 3.0, 4.0], labels=[1, 1, 1, 1])
        out = tmp_path / "metrics.csv"
        run_ok(runner, ["evaluate", "--model", str(model), "--data", str(data),
                        "--schema", str(schema), "--out", str(out)])
        report = MetricReport.from_csv(out.read_text())
        for row in report.rows:
            assert row["ctd"] == 1.0

    def test_constant_risk_scores_half(self, runner, tmp_path):
        model = tmp_path / "m.json"
        save_checkpoint(model, constant_hazard_network(), grid_points=20)
        data, schema = write_dataset(tmp_path, xs=[0.5, 0.1, 0.9, 0.3],
                                     times=[1.0, 2.0, 3.0, 4.0], labels=[1, 1, 1, 1])
        out = tmp_path / "metrics.csv"
        run_ok(runner, ["evaluate", "--model", str(model), "--data", str(data),
                        "--schema", str(schema), "--out", str(out)])
        report = MetricReport.from_csv(out.read_text())
        for row in report.rows:
            assert row["ctd"] == 0.5

    def test_matches_brute_force_oracle(self, runner, tmp_path):
        rng = np.random.default_rng(31)
        n = 30
        xs = rng.normal(size=n)
        times = rng.exponential(1.0, size=n)
        labels = (rng.random(n) > 0.35).astype(int)
        labels[0] = 1
        model = tmp_path / "m.json"
        net = identity_on_x_network()
        save_checkpoint(model, net, grid_points=25)
        data, schema = write_dataset(tmp_path, xs, times, labels)
        out = tmp_path / "metrics.csv"
        run_ok(runner, ["evaluate", "--model", str(model), "--data", str(data),
                        "--schema", str(schema), "--out", str(out)])
        report = MetricReport.from_csv(out.read_text())
        from cthazard.metrics import event_time_percentiles, km_censoring

        horizons = event_time_percentiles(times, labels)
        G = km_censoring(times, labels)
        X = xs.reshape(-1, 1)
        for frac, h in zip((0.25, 0.5, 0.75), horizons):
            surv = survival_at(net, X, h, 25)
            exp_ctd = brute_force_ctd(1.0 - surv, times, labels, G, h)
            exp_brier = brute_force_brier(surv, times, labels, G, h)
            assert report.value(1, frac, "ctd") == pytest.approx(exp_ctd, abs=1e-12)
            assert report.value(1, frac, "brier") == pytest.approx(exp_brier, abs=1e-12)

    def test_dimension_mismatch_is_input_error(self, runner, tmp_path):
        model = tmp_path / "m.json"
        save_checkpoint(model, constant_hazard_network(covariates=3), grid_points=10)
        data, schema = write_dataset(tmp_path, xs=[1.0, 2.0], times=[1.0, 2.0], labels=[1, 1])
        result = runner.invoke(cli, ["evaluate", "--model", str(model), "--data", str(data),
                                     "--schema", str(schema), "--out", str(tmp_path / "o.csv")])
        assert result.exit_code != 0

    def test_undefined_metric_exits_two(self, tmp_path):
        model = tmp_path / "m.json"
        save_checkpoint(model, constant_hazard_network(), grid_points=10)
        data, schema = write_dataset(tmp_path, xs=[1.0], times=[2.0], labels=[1])
        proc = subprocess.run(
            [sys.executable, "-m", "cthazard.cli", "evaluate", "--model", str(model),
             "--data", str(data), "--schema", str(schema), "--out", str(tmp_path / "o.csv")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 2

    def test_evaluation_is_stateless(self, runner, tmp_path):
        model = tmp_path / "m.json"
        save_checkpoint(model, identity_on_x_network(), grid_points=15)
        rng = np.random.default_rng(4)
        data, schema = write_dataset(tmp_path, rng.normal(size=12),
                                     rng.exponential(1, size=12), np.ones(12, dtype=int))
        out1, out2 = tmp_path / "m1.csv", tmp_path / "m2.csv"
        run_ok(runner, ["evaluate", "--model", str(model), "--data", str(data),
                        "--schema", str(schema), "--out", str(out1)])
        run_ok(runner, ["evaluate", "--model", str(model), "--data", str(data),
                        "--schema", str(schema), "--out", str(out2)])
        assert out1.read_bytes() == out2.read_bytes()


class TestPredict:
    def test_single_point_mesh(self, runner, tmp_path):
        model = tmp_path / "m.json"
        save_checkpoint(model, constant_hazard_network(), grid_points=10)
        out = tmp_path / "curve.csv"
        run_ok(runner, ["predict", "--model", str(model), "--x", "0.5",
                        "--mesh", "0", "--out", str(out)])
        rows = list(csv.DictReader(out.read_text().splitlines()))
        assert len(rows) == 1
        assert float(rows[0]["survival"]) == 1.0

    def test_two_risk_model_emits_three_value_columns(self, runner, tmp_path):
        model = tmp_path / "m.json"
        save_checkpoint(model, constant_hazard_network(risks=2), grid_points=10)
        out = tmp_path / "curve.csv"
        run_ok(runner, ["predict", "--model", str(model), "--x", "0.5",
                        "--mesh", "5@2.0", "--out", str(out)])
        rows = list(csv.DictReader(out.read_text().splitlines()))
        assert set(rows[0].keys()) == {"time", "survival", "cif_1", "cif_2"}

    def test_fine_mesh_refines_coarse_curve(self, runner, tmp_path):
        model = tmp_path / "m.json"
        save_checkpoint(model, identity_on_x_network(), grid_points=10)
        coarse, fine = tmp_path / "c.csv", tmp_path / "f.csv"
        run_ok(runner, ["predict", "--model", str(model), "--x", "0.8", "--mesh", "6@2.0", "--out", str(coarse)])
        run_ok(runner, ["predict", "--model", str(model), "--x", "0.8", "--mesh", "51@2.0", "--out", str(fine)])
        coarse_rows = [(float(r["time"]), float(r["survival"])) for r in csv.DictReader(coarse.read_text().splitlines())]
        fine_rows = [(float(r["time"]), float(r["survival"])) for r in csv.DictReader(fine.read_text().splitlines())]
        fine_t = np.array([t for t, _ in fine_rows])
        fine_s = np.array([s for _, s in fine_rows])
        for t, s in coarse_rows:
            j = int(np.argmin(np.abs(fine_t - t)))
            assert abs(fine_t[j] - t) < 1e-9
            assert s == pytest.approx(fine_s[j], abs=2e-3)

    def test_malformed_mesh_rejected(self, runner, tmp_path):
        model = tmp_path / "m.json"
        save_checkpoint(model, constant_hazard_network(), grid_points=10)
        result = runner.invoke(cli, ["predict", "--model", str(model), "--x", "0.5",
                                     "--mesh", "what", "--out", str(tmp_path / "c.csv")])
        assert result.exit_code != 0


class TestExperiment:
    def test_row_count_is_full_cartesian_product(self, runner, tmp_path):
        data = tmp_path / "d.csv"
        run_ok(runner, ["simulate", "--kind", "nonlinear", "--n", "60", "--seed", "9", "--out", str(data)])
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"max_epochs": 1, "patience": 1, "batch_size": 32,
                                   "hidden": [4, 4], "embed_dim": 4, "seed": 13}))
        out = tmp_path / "results.csv"
        run_ok(runner, ["experiment", "--data", str(data), "--schema", str(tmp_path / "d.schema.json"),
                        "--config", str(cfg), "--out", str(out)])
        rows = list(csv.DictReader(out.read_text().splitlines()))
        assert len(rows) == 36  # 2 schemes x 6 densities x 3 horizons
        assert (tmp_path / "results.png").exists()

    def test_same_seed_identical_table(self, runner, tmp_path):
        data = tmp_path / "d.csv"
        run_ok(runner, ["simulate", "--kind", "nonlinear", "--n", "50", "--seed", "10", "--out", str(data)])
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"max_epochs": 1, "patience": 1, "batch_size": 32,
                                   "hidden": [4, 4], "embed_dim": 4, "seed": 14}))
        outs = []
        for name in ("r1.csv", "r2.csv"):
            out = tmp_path / name
            run_ok(runner, ["experiment", "--data", str(data), "--schema", str(tmp_path / "d.schema.json"),
                            "--config", str(cfg), "--m", "3,5", "--out", str(out)])
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


class TestManifest:
    def test_manifest_records_resolved_config_and_outputs(self, runner, tmp_path):
        out = tmp_path / "d.csv"
        run_ok(runner, ["simulate", "--kind", "nonlinear", "--n", "10", "--seed", "21", "--out", str(out)])
        manifest = json.loads((tmp_path / "d.csv.manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["seed"] == 21
        assert manifest["config"]["n"] == 10
        assert "version" in manifest and "duration_seconds" in manifest
        assert manifest["outputs"]["data"].endswith("d.csv")
