import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from infbeta import io
from infbeta.cli import main, normal_scores
from infbeta.errors import ConfigError, DataError, SchemaVersionError
from infbeta.links import link_inverse
from infbeta.regression import Dataset, fit, log_likelihood
from infbeta.simulate import (APPLICATION_COVARIATES, APPLICATION_TERMS, APPLICATION_THETA,
                              application_like_data, second_experiment, simulate_replication)

from conftest import planted_outlier, random_problem

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")
APP_CONFIG = os.path.join(CONFIGS, "application_model.json")
APP_DATA = os.path.join(CONFIGS, "application.csv")


def write_csv(path, columns):
    names = list(columns)
    n = len(columns[names[0]])
    io.write_table(path, names, [[columns[k][i] for k in names] for i in range(n)])
    return str(path)


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def spec_to_columns(spec, data):
    cols = {"y": data.y}
    for prefix, mat in (("v", spec.V), ("x", spec.X), ("z", spec.Z)):
        for j in range(1, mat.shape[1]):
            cols[f"{prefix}{j}"] = mat[:, j]
    return cols


def spec_to_config(spec, **extra):
    def part(prefix, mat, link):
        return {"link": link.value, "terms": [f"{prefix}{j}" for j in range(1, mat.shape[1])]}

    cfg = {"c": spec.c, "alpha": part("v", spec.V, spec.link_alpha),
           "mu": part("x", spec.X, spec.link_mu), "phi": part("z", spec.Z, spec.link_phi)}
    cfg.update(extra)
    return cfg


class TestModelConfig:
    def test_defaults(self):
        cfg = io.ModelConfig.from_dict({"c": 1})
        assert cfg.alpha.link.value == "logit" and cfg.phi.link.value == "log"
        assert cfg.alpha.columns() == ("(Intercept)",)
        assert cfg.confidence == 0.95
        assert io.ModelConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("raw, needle", [
        ({"c": 2}, "c must be"),
        ({"colour": 1}, "unknown config field"),
        ({"mu": {"link": "banana"}}, "mu"),
        ({"mu": {"link": "log"}}, "wrong domain"),
        ({"phi": {"link": "logit"}}, "wrong domain"),
        ({"alpha": {"terms": "x"}}, "list of column names"),
        ({"alpha": {"terms": ["x", "x"]}}, "duplicates"),
        ({"alpha": {"intercept": False}}, "no columns"),
        ({"confidence": 1.0}, "confidence"),
        ({"seed": -3}, "seed"),
        ({"mu": {"lnk": "logit"}}, "unknown field"),
        ([1, 2], "JSON object"),
    ])
    def test_rejects(self, raw, needle):
        with pytest.raises(ConfigError, match=needle):
            io.ModelConfig.from_dict(raw)

    def test_invalid_json_reports_line(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{\n "c": 0,\n}')
        with pytest.raises(ConfigError, match="line 3"):
            io.load_config(p)


class TestLoadCsv:
    def test_three_rows_intercept_only(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", {"y": [0.0, 0.3, 0.6]})
        data, spec = io.load_csv_dataset(path, io.ModelConfig.from_dict({}))
        for mat in (spec.V, spec.X, spec.Z):
            assert mat.shape == (3, 1) and np.all(mat == 1.0)
        assert data.y.tolist() == [0.0, 0.3, 0.6]
        assert spec.names_mu == ("(Intercept)",)

    def test_non_inflated_extreme_lists_lines(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", {"y": [0.0, 1.0, 0.5, 1.0]})
        with pytest.raises(DataError, match=r"line\(s\) 3, 5"):
            io.load_csv_dataset(path, io.ModelConfig.from_dict({"c": 0}))
        path = write_csv(tmp_path / "e.csv", {"y": [0.0, 1.0, 0.5]})
        with pytest.raises(DataError, match=r"line\(s\) 2"):
            io.load_csv_dataset(path, io.ModelConfig.from_dict({"c": 1}))

    def test_out_of_range(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", {"y": [0.2, 1.5, -0.1]})
        with pytest.raises(DataError, match=r"outside \[0, 1\] on line\(s\) 3, 4"):
            io.load_csv_dataset(path, io.ModelConfig.from_dict({}))

    def test_non_numeric_cell(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("y,x\n0.2,1\n0.3,abc\n")
        cfg = io.ModelConfig.from_dict({"mu": {"terms": ["x"]}})
        with pytest.raises(DataError, match="line 3, column 'x'"):
            io.load_csv_dataset(p, cfg)

    def test_missing_column(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", {"y": [0.2, 0.3]})
        with pytest.raises(DataError, match="missing column"):
            io.load_csv_dataset(path, io.ModelConfig.from_dict({"phi": {"terms": ["w"]}}))

    def test_ragged_and_empty(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("y,x\n0.2,1\n0.3\n")
        with pytest.raises(DataError, match="line 3 has 1 fields"):
            io.load_csv_dataset(p, io.ModelConfig.from_dict({}))
        p.write_text("")
        with pytest.raises(DataError, match="header"):
            io.load_csv_dataset(p, io.ModelConfig.from_dict({}))
        p.write_text("y\n")
        with pytest.raises(DataError, match="no data rows"):
            io.load_csv_dataset(p, io.ModelConfig.from_dict({}))

    def test_quoted_fields(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text('"name","y"\n"a, b",0.25\n"c",0\n')
        data, _ = io.load_csv_dataset(p, io.ModelConfig.from_dict({}))
        assert data.y.tolist() == [0.25, 0.0]


class TestTables:
    def test_round_trip(self, tmp_path):
        g = np.random.default_rng(0)
        vals = np.concatenate([g.normal(0, 1, 50) * 10.0 ** g.integers(-300, 300, 50),
                               [np.nan, np.inf, -np.inf, 0.0, -0.0, 5e-324]])
        path = tmp_path / "t.csv"
        io.write_table(path, ["i", "v", "s"], [[i, v, "lbl"] for i, v in enumerate(vals)])
        header, rows = io.read_table(path)
        assert header == ["i", "v", "s"]
        back = np.array([r[1] for r in rows])
        assert np.array_equal(back, vals, equal_nan=True)
        assert rows[0][2] == "lbl"

    @settings(max_examples=200, deadline=None)
    @given(st.floats(allow_nan=False))
    def test_fmt_is_exact(self, x):
        assert float(io.fmt(x).replace("Inf", "inf")) == x


@pytest.fixture(scope="module")
def app_fit():
    cfg = io.load_config(APP_CONFIG)
    data, spec = io.load_csv_dataset(APP_DATA, cfg)
    return fit(spec, data, config=cfg.to_dict()), spec, data


class TestModelFile:
    def test_save_load_save_identical(self, app_fit, tmp_path):
        fitted, spec, data = app_fit
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        io.save_model(fitted, a)
        loaded = io.load_model(a)
        io.save_model(loaded, b)
        assert a.read_bytes() == b.read_bytes()
        io.save_model(io.bind(loaded, spec, data), b)
        assert a.read_bytes() == b.read_bytes()

    def test_fields_reproduced(self, app_fit, tmp_path):
        fitted, _, _ = app_fit
        path = tmp_path / "m.json"
        io.save_model(fitted, path)
        loaded = io.load_model(path)
        for attr in ("alpha", "mu", "phi", "eta1", "eta2", "eta3", "inv_information"):
            np.testing.assert_allclose(getattr(loaded, attr), getattr(fitted, attr),
                                       rtol=1e-12, atol=0)
        np.testing.assert_allclose(loaded.theta.flat, fitted.theta.flat, rtol=1e-12, atol=0)
        assert loaded.loglik == pytest.approx(fitted.loglik, rel=1e-12)
        assert loaded.names == fitted.names and loaded.links == fitted.links
        assert loaded.discrete.iterations == fitted.discrete.iterations
        assert loaded.converged

    def test_loglik_recomputed(self, app_fit, tmp_path):
        fitted, spec, data = app_fit
        path = tmp_path / "m.json"
        io.save_model(fitted, path)
        loaded = io.load_model(path)
        assert log_likelihood(spec, data, loaded.theta.flat) == pytest.approx(
            loaded.loglik, rel=1e-10, abs=1e-10)

    @pytest.mark.parametrize("edit, err, needle", [
        (lambda d: d["dims"].update(p=5), ConfigError, "dims"),
        (lambda d: d["dims"].update(n=199), ConfigError, "fitted.alpha"),
        (lambda d: d["dims"].update(k=0), ConfigError, "positive"),
        (lambda d: d.update(schema="infbeta-model/2"), SchemaVersionError, "schema"),
        (lambda d: d.pop("theta"), ConfigError, "malformed"),
        (lambda d: d["theta"].update(rho=["x", 1, 2, 3]), ConfigError, "numeric"),
    ])
    def test_tampered(self, app_fit, tmp_path, edit, err, needle):
        fitted, _, _ = app_fit
        path = tmp_path / "m.json"
        io.save_model(fitted, path)
        doc = json.loads(path.read_text())
        edit(doc)
        path.write_text(json.dumps(doc))
        with pytest.raises(err, match=needle):
            io.load_model(path)

    def test_fingerprint_mismatch(self, app_fit, tmp_path):
        fitted, spec, data = app_fit
        path = tmp_path / "m.json"
        io.save_model(fitted, path)
        loaded = io.load_model(path)
        y = data.y.copy()
        y[np.flatnonzero(data.interior)[0]] *= 0.5
        with pytest.raises(ConfigError, match="fingerprint"):
            io.bind(loaded, spec, Dataset(y, 0), io.stored_fingerprint(path))
        with pytest.raises(ConfigError, match="fingerprint"):
            io.bind(loaded, spec, Dataset(y, 0))
        with pytest.raises(ConfigError, match="observations"):
            io.bind(loaded, spec.subset(np.arange(10)), data.subset(np.arange(10)))


@pytest.fixture(scope="module")
def fitted_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    assert main(["fit", "--config", APP_CONFIG, "--data", APP_DATA, "--out", str(out)]) == 0
    return out


class TestCliFit:
    def test_artifacts(self, fitted_dir, app_fit):
        fitted, _, _ = app_fit
        header, rows = io.read_table(fitted_dir / "coefficients.csv")
        assert header == ["component", "parameter", "estimate", "se", "z", "p_value",
                          "lower", "upper"]
        assert len(rows) == 12
        np.testing.assert_array_equal([r[2] for r in rows], fitted.theta.flat)
        np.testing.assert_array_equal([r[3] for r in rows],
                                      np.sqrt(np.diag(fitted.inv_information)))
        for r in rows:
            assert r[4] == pytest.approx(r[2] / r[3], rel=1e-15)
            assert r[5] == pytest.approx(2 * norm.sf(abs(r[4])), rel=1e-12)
            assert r[7] - r[6] == pytest.approx(2 * 1.959963984540054 * r[3], rel=1e-12)
        summary = json.loads((fitted_dir / "summary.json").read_text())
        assert summary["status"] == "converged"
        assert summary["loglik"]["total"] == fitted.loglik
        assert set(summary["pseudo_r2"]) == {"corr", "mcfadden", "cox_snell"}
        assert summary["criteria"]["AIC"] == pytest.approx(-2 * fitted.loglik + 24)
        doc = json.loads((fitted_dir / "model.json").read_text())
        assert doc["schema"] == "infbeta-model/1"
        assert doc["config"] == io.load_config(APP_CONFIG).to_dict()

    def test_deterministic(self, fitted_dir, tmp_path):
        assert main(["fit", "--config", APP_CONFIG, "--data", APP_DATA,
                     "--out", str(tmp_path)]) == 0
        for name in ("model.json", "coefficients.csv", "summary.json"):
            assert (tmp_path / name).read_bytes() == (fitted_dir / name).read_bytes()

    def test_warm_start(self, fitted_dir, tmp_path):
        assert main(["fit", "--config", APP_CONFIG, "--data", APP_DATA, "--out", str(tmp_path),
                     "--init", str(fitted_dir / "model.json")]) == 0
        conv = json.loads((tmp_path / "summary.json").read_text())["convergence"]
        assert conv["discrete"]["iterations"] <= 2
        assert conv["continuous"]["iterations"] <= 2

    def test_warm_start_wrong_design(self, fitted_dir, tmp_path):
        cfg = write_json(tmp_path / "c.json", {"mu": {"terms": ["lnpop"]}})
        code = main(["fit", "--config", cfg, "--data", APP_DATA, "--out", str(tmp_path / "o"),
                     "--init", str(fitted_dir / "model.json")])
        assert code == 2

    def test_exit_codes(self, tmp_path, capsys):
        out = str(tmp_path / "o")
        assert main(["fit", "--config", str(tmp_path / "missing.json"), "--data", APP_DATA,
                     "--out", out]) == 2
        bad = write_csv(tmp_path / "bad.csv", {"y": [0.0, 0.5, 1.0, 0.2]})
        cfg = write_json(tmp_path / "c.json", {})
        assert main(["fit", "--config", cfg, "--data", bad, "--out", out]) == 3
        assert "line(s) 4" in capsys.readouterr().err
        with pytest.raises(SystemExit) as info:
            main(["fit", "--config", cfg])
        assert info.value.code == 2
        with pytest.raises(SystemExit) as info:
            main(["bogus"])
        assert info.value.code == 2

    def test_non_convergence_writes_partial(self, tmp_path, capsys):
        g = np.random.default_rng(3)
        x = g.normal(0, 1, 80)
        y = np.where(x > 0, 0.0, np.clip(g.beta(2, 5, 80), 1e-6, None))
        data = write_csv(tmp_path / "sep.csv", {"y": y, "x": x})
        cfg = write_json(tmp_path / "c.json", {"alpha": {"terms": ["x"]}})
        out = tmp_path / "o"
        assert main(["fit", "--config", cfg, "--data", data, "--out", str(out)]) == 4
        err = capsys.readouterr().err
        assert "separation" in err and "score sup-norm" in err
        summary = json.loads((out / "summary.json").read_text())
        assert summary["status"] == "failed"
        assert not summary["convergence"]["discrete"]["converged"]
        assert summary["convergence"]["continuous"]["converged"]
        _, rows = io.read_table(out / "coefficients.csv")
        assert all(math.isnan(r[2]) for r in rows if r[0] == "alpha")
        assert all(math.isfinite(r[3]) for r in rows if r[0] != "alpha")
        partial = io.load_model(out / "model.json")
        assert not partial.converged

    def test_version_and_help(self):
        res = subprocess.run([sys.executable, "-m", "infbeta", "--version"],
                             capture_output=True, text=True)
        assert res.returncode == 0 and res.stdout.startswith("infbeta ")
        res = subprocess.run([sys.executable, "-m", "infbeta", "--help"],
                             capture_output=True, text=True)
        assert res.returncode == 0
        for cmd in ("fit", "diagnose", "simulate"):
            assert cmd in res.stdout


@pytest.fixture(scope="module")
def diag_dir(fitted_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("diag")
    assert main(["diagnose", "--model", str(fitted_dir / "model.json"), "--data", APP_DATA,
                 "--seed", "11", "--out", str(out), "--svg"]) == 0
    return out


class TestCliDiagnose:
    def test_tables(self, diag_dir, app_fit):
        fitted, _, data = app_fit
        n, n_in = data.n, int(data.interior.sum())
        header, rows = io.read_table(diag_dir / "quantile_residuals.csv")
        assert header == ["obs", "y", "r_q1", "r_q2", "r_q3", "r_q4"] and len(rows) == n
        header, rows = io.read_table(diag_dir / "discrete_residuals.csv")
        assert header == ["obs", "y", "alpha_hat", "h", "r_pD", "c_D"] and len(rows) == n
        np.testing.assert_array_equal([r[2] for r in rows], fitted.alpha)
        header, rows = io.read_table(diag_dir / "continuous_residuals.csv")
        assert header == ["obs", "y", "mu_hat", "P", "r_pC", "c_C"] and len(rows) == n_in
        assert all(0 < r[1] < 1 for r in rows)
        header, rows = io.read_table(diag_dir / "envelope.csv")
        assert header == ["rank", "normal_score", "observed", "lower", "median", "upper"]
        assert len(rows) == n
        obs = np.array([r[2] for r in rows])
        assert np.all(np.diff(obs) >= 0)
        summary = json.loads((diag_dir / "diagnostics.json").read_text())
        assert summary["envelope"]["n_sim"] == 100 and summary["envelope"]["band"] == 0.95
        assert summary["realizations"] == 4
        for name in ("rq_envelope.svg", "rpd_alpha.svg", "rpc_mu.svg", "cc_index.svg"):
            assert (diag_dir / name).read_text().startswith("<svg")

    def test_deterministic(self, fitted_dir, diag_dir, tmp_path):
        assert main(["diagnose", "--model", str(fitted_dir / "model.json"), "--data", APP_DATA,
                     "--seed", "11", "--out", str(tmp_path), "--svg"]) == 0
        names = sorted(os.listdir(diag_dir))
        assert sorted(os.listdir(tmp_path)) == names
        for name in names:
            assert (tmp_path / name).read_bytes() == (diag_dir / name).read_bytes()

    def test_seed_changes_residuals(self, fitted_dir, diag_dir, tmp_path):
        assert main(["diagnose", "--model", str(fitted_dir / "model.json"), "--data", APP_DATA,
                     "--seed", "12", "--out", str(tmp_path), "--n-sim", "0"]) == 0
        assert ((tmp_path / "quantile_residuals.csv").read_bytes()
                != (diag_dir / "quantile_residuals.csv").read_bytes())
        assert not (tmp_path / "envelope.csv").exists()

    def test_data_mismatch_is_usage_error(self, fitted_dir, tmp_path):
        cols = io._read_columns(APP_DATA, ["y", "lnpop", "prop2029", "hdie"])
        cols["hdie"] = cols["hdie"][::-1].copy()
        data = write_csv(tmp_path / "d.csv", cols)
        assert main(["diagnose", "--model", str(fitted_dir / "model.json"), "--data", data,
                     "--seed", "1", "--out", str(tmp_path / "o")]) == 2
        short = write_csv(tmp_path / "s.csv", {k: v[:50] for k, v in cols.items()})
        assert main(["diagnose", "--model", str(fitted_dir / "model.json"), "--data", short,
                     "--seed", "1", "--out", str(tmp_path / "o")]) == 2

    def test_normal_scores(self):
        s = normal_scores(5)
        np.testing.assert_allclose(s, -s[::-1], atol=1e-15)
        assert s[2] == 0.0

    def test_planted_outlier_tops_c_C(self, tmp_path):
        spec, data, t = planted_outlier(3)
        cols = spec_to_columns(spec, data)
        csv_path = write_csv(tmp_path / "d.csv", cols)
        cfg = write_json(tmp_path / "c.json", spec_to_config(spec))
        assert main(["fit", "--config", cfg, "--data", csv_path, "--out",
                     str(tmp_path / "f")]) == 0
        assert main(["diagnose", "--model", str(tmp_path / "f" / "model.json"), "--data",
                     csv_path, "--seed", "5", "--n-sim", "0", "--out", str(tmp_path / "d")]) == 0
        summary = json.loads((tmp_path / "d" / "diagnostics.json").read_text())
        assert summary["max_c_C_obs"] == t + 1


class TestCliSimulate:
    def test_runs_and_is_deterministic(self, tmp_path):
        cfg = write_json(tmp_path / "e.json", {
            "rho": [-1, 1, -0.5, 0.5], "beta": [-1, 1, -0.5, 0.5], "gamma": [2, 1, 0.5, 0.5],
            "sample_sizes": [60], "replications": 6, "seed": 3})
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", "--config", cfg, "--out", str(a)]) == 0
        assert main(["simulate", "--config", cfg, "--out", str(b), "--workers", "2"]) == 0
        for name in ("simulation.csv", "simulation.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        header, rows = io.read_table(a / "simulation.csv")
        assert header == ["estimator", "bias[n=60]", "rmse[n=60]"]
        assert [r[0] for r in rows][-1] == "failures" and len(rows) == 13

    def test_bad_config(self, tmp_path):
        cfg = write_json(tmp_path / "e.json", {"beta": [1], "gamma": [1]})
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


class TestEstimationOracles:
    def test_intercept_only_standard_error(self):
        g = np.random.default_rng(8)
        n = 400
        y = np.where(g.random(n) < 0.3, 0.0, g.beta(3, 4, n))
        spec, _, _ = random_problem(0, n=n, p=1, k=1, m=1)
        f = fit(spec, Dataset(y, 0))
        a = np.mean(y == 0)
        assert f.alpha[0] == pytest.approx(a, rel=1e-10)
        # s.e.(alpha) = sqrt(a(1-a)/n) carried to the logit scale by 1 / (dalpha/deta)
        se_alpha = math.sqrt(a * (1 - a) / n)
        assert math.sqrt(f.inv_information[0, 0]) == pytest.approx(
            se_alpha / (a * (1 - a)), rel=1e-10)

    def test_consistency_large_n(self):
        spec, data = simulate_replication(second_experiment(1, seed=99), 5000, 0)
        f = fit(spec, data)
        truth = second_experiment(1).true_theta()
        se = np.sqrt(np.diag(f.inv_information))
        assert np.all(np.abs(f.theta.flat - truth) < 4 * se)


def clipped_normal_moments(mean, sd, lo, hi):
    """Mean and sd of clip(N(mean, sd^2), lo, hi) by quadrature."""
    pdf = norm(mean, sd)
    mass_lo, mass_hi = pdf.cdf(lo), pdf.sf(hi)
    m1 = lo * mass_lo + hi * mass_hi + integrate.quad(lambda x: x * pdf.pdf(x), lo, hi)[0]
    m2 = lo ** 2 * mass_lo + hi ** 2 * mass_hi + integrate.quad(
        lambda x: x * x * pdf.pdf(x), lo, hi)[0]
    return m1, math.sqrt(m2 - m1 * m1)


class TestSyntheticApplicationData:
    def test_file_summary_matches_generation(self, tmp_path):
        n = 20000
        cols = application_like_data(n, seed=4)
        path = write_csv(tmp_path / "app.csv", cols)
        back = io._read_columns(path, list(cols))
        for name, (mean, sd, lo, hi) in APPLICATION_COVARIATES.items():
            m, s = clipped_normal_moments(mean, sd, lo, hi)
            x = back[name]
            assert x.min() >= lo and x.max() <= hi
            assert abs(x.mean() - m) < 4 * s / math.sqrt(n)
            assert x.std() == pytest.approx(s, rel=0.03)
        D = np.column_stack([np.ones(n)] + [back[t] for t in APPLICATION_TERMS])
        alpha = link_inverse("logit", D @ np.array(APPLICATION_THETA["rho"]))
        zeros = np.mean(back["y"] == 0)
        assert abs(zeros - alpha.mean()) < 4 * math.sqrt(np.mean(alpha * (1 - alpha)) / n)
        mu = link_inverse("logit", D @ np.array(APPLICATION_THETA["beta"]))
        inner = back["y"] > 0
        pred = mu[inner].mean()
        assert abs(back["y"][inner].mean() - pred) < 4 * back["y"][inner].std() / math.sqrt(
            inner.sum())

    def test_shipped_file_loads(self):
        data, spec = io.load_csv_dataset(APP_DATA, io.load_config(APP_CONFIG))
        assert data.n == 200 and (spec.p, spec.k, spec.m) == (4, 4, 4)
        assert spec.names_alpha == ("(Intercept)",) + APPLICATION_TERMS
