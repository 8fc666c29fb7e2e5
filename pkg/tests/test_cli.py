import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from ctdsmove import io as fio
from ctdsmove.cli import _stream, load_track, main, model_config, read_config
from ctdsmove.glm import fit_irls
from ctdsmove.pipeline import impute_designs

COVARIATES = """
[covariates]
intercept = intercept
not_forest = location layer=not_forest
field = directional_field field=field_x,field_y
"""
TRUTH = {"intercept": -10.5, "not_forest": 1.0, "field": 0.5}


def write_ini(path, body):
    path.write_text(body)
    return path


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    """A slow simulated animal (about one move per fix) on a synthetic landscape, written by the simulate command."""
    root = tmp_path_factory.mktemp("sim")
    truth = "\n".join(f"{k} = {v}" for k, v in TRUTH.items())
    ini = write_ini(root / "sim.ini", f"""
[run]
seed = 11
output = out
figures = false
[simulate]
n_rows = 30
n_cols = 30
n_features = 4
span = {12 * 86400}
interval = 3600
{COVARIATES}
[truth]
{truth}
""")
    assert main(["simulate", str(ini)]) == 0
    return root / "out"


def layers_section(sim):
    return "[layers]\n" + "\n".join(f"{p.stem} = {p}" for p in sorted((sim / "layers").glob("*.asc")))


def fit_ini(tmp_path, sim, extra="", K=1, estimator="mle", figures=False):
    return write_ini(tmp_path / "run.ini", f"""
[run]
seed = 3
output = {tmp_path / 'out'}
figures = {str(figures).lower()}
[data]
telemetry = {sim / 'telemetry.csv'}
{layers_section(sim)}
{COVARIATES}
[imputation]
K = {K}
[fit]
estimator = {estimator}
n_folds = 5
{extra}
""")


class TestSimulate:
    def test_outputs(self, sim):
        truth = fio.read_json(sim / "truth.json")
        assert truth["columns"] == list(TRUTH)
        assert truth["coefficients"] == list(TRUTH.values())
        assert truth["n_transitions"] > 100
        tr = fio.read_tracks(sim / "telemetry.csv")[0]
        assert tr.times[0] == 0.0 and tr.times[-1] == 12 * 86400
        assert (sim / "true_discrete_path.csv").is_file()
        assert len(list((sim / "layers").glob("*.asc"))) >= 4


class TestImpute:
    def test_k_paths_and_params(self, tmp_path, sim):
        ini = fit_ini(tmp_path, sim, K=2)
        assert main(["impute", str(ini)]) == 0
        files = sorted((tmp_path / "out" / "paths").glob("*.csv"))
        assert [f.name for f in files] == ["path_000.csv", "path_001.csv"]
        params = fio.read_json(tmp_path / "out" / "ctcrw_params.json")
        assert params["gamma_ou"] > 0 and params["sigma_ou"] > 0
        a, b = (pd.read_csv(f) for f in files)
        assert not np.array_equal(a[["x", "y"]], b[["x", "y"]])

    def test_byte_identical_under_same_seed(self, tmp_path, sim):
        outs = []
        for name in ("a", "b"):
            d = tmp_path / name
            d.mkdir()
            ini = fit_ini(d, sim, K=2)
            assert main(["impute", str(ini)]) == 0
            outs.append([f.read_bytes() for f in sorted((d / "out" / "paths").glob("*.csv"))])
        assert outs[0] == outs[1]

    def test_discretize_after_impute(self, tmp_path, sim):
        ini = fit_ini(tmp_path, sim, K=2)
        assert main(["impute", str(ini)]) == 0
        assert main(["discretize", str(ini)]) == 0
        assert len(list((tmp_path / "out" / "discrete").glob("*.csv"))) == 2
        x = pd.read_csv(tmp_path / "out" / "designs" / "design_000.csv")
        assert list(x.columns[-3:]) == list(TRUTH)


class TestErrors:
    def test_missing_telemetry(self, tmp_path, sim, capsys):
        ini = fit_ini(tmp_path, sim)
        ini.write_text(ini.read_text().replace(str(sim / "telemetry.csv"), str(tmp_path / "nowhere.csv")))
        assert main(["fit", str(ini)]) == 2
        assert "nowhere.csv" in capsys.readouterr().err

    def test_missing_config(self, tmp_path, capsys):
        assert main(["fit", str(tmp_path / "none.ini")]) == 2
        assert "none.ini" in capsys.readouterr().err

    def test_bayes_lasso_needs_penalty(self, tmp_path, sim, capsys):
        ini = fit_ini(tmp_path, sim, estimator="bayes-lasso")
        assert main(["fit", str(ini)]) == 1
        err = capsys.readouterr().err
        assert "ctdsmove cv" in err and "gamma_lasso" in err
        assert not (tmp_path / "out" / "summary.json").exists()

    def test_unknown_estimator(self, tmp_path, sim, capsys):
        assert main(["fit", str(fit_ini(tmp_path, sim, estimator="ridge"))]) == 1
        assert "ridge" in capsys.readouterr().err

    def test_bad_covariate_option(self, tmp_path, sim, capsys):
        ini = fit_ini(tmp_path, sim)
        ini.write_text(ini.read_text().replace("layer=not_forest", "layr=not_forest"))
        assert main(["fit", str(ini)]) == 1
        assert "layr" in capsys.readouterr().err


class TestFit:
    def test_mle_single_path_equals_glm(self, tmp_path, sim):
        ini = fit_ini(tmp_path, sim)
        assert main(["fit", str(ini)]) == 0
        rep = fio.read_json(tmp_path / "out" / "fit_report.json")
        cfg = read_config(ini)
        _, _, _, designs = impute_designs(load_track(cfg), model_config(cfg), 1, seed=_stream(cfg, "impute"))
        direct = fit_irls(designs[0])
        est = np.array([r["estimate"] for r in rep["coefficients"]])
        se = np.array([r["se"] for r in rep["coefficients"]])
        assert np.array_equal(est, direct.beta_hat)
        assert np.array_equal(se, direct.std_err)

    def test_round_trip_recovers_signs(self, tmp_path, sim):
        ini = fit_ini(tmp_path, sim, K=3)
        assert main(["fit", str(ini)]) == 0
        rep = fio.read_json(tmp_path / "out" / "fit_report.json")
        est = {r["covariate"]: r["estimate"] for r in rep["coefficients"]}
        # a slow animal: fast ones wash location effects out of the imputed paths
        assert est["field"] > 0 and est["not_forest"] > 0
        assert rep["K"] == 3 and rep["correction"] == pytest.approx(4 / 3)

    def test_lasso_cv_report(self, tmp_path, sim):
        ini = fit_ini(tmp_path, sim, estimator="lasso-cv", figures=True)
        assert main(["fit", str(ini)]) == 0
        out = tmp_path / "out"
        rep = fio.read_json(out / "fit_report.json")
        assert rep["gamma_lasso"] > 0 and rep["cv_rule"] == "1se"
        curve = rep["cv_curve"]
        assert len(curve["gamma"]) == len(curve["mean_deviance"]) > 1
        assert curve["gamma"][curve["best_index"]] == pytest.approx(rep["gamma_lasso"])
        for f in ("coefficients.csv", "coefficients.png", "cv_curve.png"):
            assert (out / f).is_file()

    def test_cv_then_bayes_lasso(self, tmp_path, sim):
        out = tmp_path / "out"
        extra = f"cv_report = {out / 'cv.json'}\n[bayes]\nn_iter = 600\nn_burn = 200"
        ini = fit_ini(tmp_path, sim, extra=extra, estimator="bayes-lasso")
        assert main(["cv", str(ini)]) == 0
        gamma = fio.read_json(out / "cv.json")["gamma_lasso"]
        assert main(["fit", str(ini)]) == 0
        rep = fio.read_json(out / "summary.json")
        assert rep["prior"] == "LaplacePrior" and rep["gamma_lasso"] == pytest.approx(gamma)
        chain = pd.read_csv(out / "chain.csv")
        assert len(chain) == 400 and list(chain.columns[1:]) == list(TRUTH)

    def test_deterministic_report(self, tmp_path, sim):
        texts = []
        for name in ("a", "b"):
            d = tmp_path / name
            d.mkdir()
            assert main(["fit", str(fit_ini(d, sim, K=2))]) == 0
            texts.append((d / "out" / "fit_report.json").read_bytes())
        assert texts[0] == texts[1]


class TestSpline:
    def test_beta_curves(self, tmp_path, sim):
        ini = fit_ini(tmp_path, sim, figures=True)
        text = ini.read_text().replace("field=field_x,field_y", "field=field_x,field_y time_varying")
        ini.write_text(text + "\n[spline]\nperiod = 86400\nknot_spacing = 21600\n")
        assert main(["fit", str(ini)]) == 0
        curves = pd.read_csv(tmp_path / "out" / "beta_curves.csv")
        assert curves["covariate"].unique().tolist() == ["field"]
        assert curves["hour"].tolist() == list(range(24))
        assert np.all(curves["lower"] < curves["estimate"]) and np.all(curves["estimate"] < curves["upper"])
        assert (tmp_path / "out" / "beta_curves.png").is_file()


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "ctdsmove", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "ctdsmove" in res.stdout
    res = subprocess.run([sys.executable, "-m", "ctdsmove", "fit", str(tmp_path / "x.ini")],
                         capture_output=True, text=True)
    assert res.returncode == 2 and "x.ini" in res.stderr
