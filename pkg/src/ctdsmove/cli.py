"""Command-line interface: ``ctdsmove <subcommand> CONFIG``.

Every run is described by one INI file.  Sections:

``[run]``
    ``seed``, ``output`` (directory), ``figures`` (true/false).
``[data]``
    ``telemetry`` (``id,time,x,y`` CSV), ``track`` (id; default the first).
``[layers]``
    ``name = raster.asc`` for each covariate layer.
``[covariates]``
    ``name = kind [layer=L] [field=FX,FY] [companion=path.csv] [time_varying]``.
``[spline]``
    ``period``, ``knot_spacing``, ``degree``.
``[imputation]``
    ``K``, ``delta``, ``params`` (JSON from ``impute``), ``estimate_obs_sd``,
    ``use_censored_tail``, ``clip_to_grid`` (default true).
``[fit]``
    ``estimator`` (mle, lasso-cv, stacked-lasso, bayes, bayes-lasso),
    ``n_folds``, ``cv_rule``, ``finite_k_correction``, ``gamma_lasso``,
    ``cv_report``.
``[bayes]``
    ``n_iter``, ``n_burn``, ``prior_var``, ``prior`` (gaussian or laplace).
``[simulate]`` / ``[truth]`` / ``[recovery]``
    see :func:`cmd_simulate` and :func:`cmd_recovery_study`.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from pathlib import Path

import numpy as np
from scipy.stats import norm

from . import __version__
from . import io as fio
from .ctcrw import CtcrwParams, Track, draw_path
from .design import CovariateSpec, SplineConfig, build_design, spline_basis
from .discretize import discretize
from .glm import cv_lasso, fit_irls
from .mcmc import GaussianPrior, LaplacePrior, composition_sample, equal_tailed, gaussian_interval
from .pipeline import ModelConfig, clip_path, fitted_params, impute_designs, seeds
from .pooling import pool, stack_designs

log = logging.getLogger("ctdsmove")

ESTIMATORS = ("mle", "lasso-cv", "stacked-lasso", "bayes", "bayes-lasso")
THREADS_ENV = "CTDS_THREADS"


class ConfigError(ValueError):
    """Missing or inconsistent run configuration."""


# ---------------------------------------------------------------------------
# configuration


def read_config(path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    cfg = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cfg.optionxform = str  # covariate and layer names are case sensitive
    cfg.read(path)
    cfg.base_dir = path.parent
    return cfg


def _path(cfg, section, key, required=True) -> Path | None:
    raw = cfg.get(section, key, fallback=None)
    if raw is None:
        if required:
            raise ConfigError(f"[{section}] {key} is required")
        return None
    p = Path(raw)
    return p if p.is_absolute() else cfg.base_dir / p


def _seed(cfg) -> int:
    return cfg.getint("run", "seed", fallback=0)


STREAMS = ("impute", "cv", "bayes", "simulate")


def _stream(cfg, name: str) -> np.random.SeedSequence:
    """Seed for one named random stream of a run; streams never overlap."""
    return np.random.SeedSequence([_seed(cfg), STREAMS.index(name)])


def _output(cfg, override=None) -> Path:
    out = Path(override) if override else _path(cfg, "run", "output", required=False) or Path("ctds_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _figures(cfg) -> bool:
    return cfg.getboolean("run", "figures", fallback=True)


def load_grid(cfg):
    if not cfg.has_section("layers") or not cfg.options("layers"):
        raise ConfigError("[layers] must list at least one raster")
    return fio.load_grid({k: _path(cfg, "layers", k) for k in cfg.options("layers")})


def load_spline(cfg) -> SplineConfig | None:
    if not cfg.has_section("spline"):
        return None
    s = cfg["spline"]
    return SplineConfig(s.getfloat("period", 86400.0), s.getfloat("knot_spacing", 21600.0),
                        s.getint("degree", 3))


def parse_spec(name: str, text: str, base_dir: Path) -> CovariateSpec:
    """``kind [layer=L] [field=FX,FY] [companion=path.csv] [time_varying]``."""
    tokens = text.split()
    if not tokens:
        raise ConfigError(f"covariate {name!r} has no kind")
    kw = {"name": name, "kind": tokens[0]}
    for tok in tokens[1:]:
        key, _, val = tok.partition("=")
        if key == "time_varying" and not val:
            kw["time_varying"] = True
        elif key == "layer":
            kw["layer"] = val
        elif key == "field":
            kw["field"] = tuple(val.split(","))
        elif key == "companion":
            p = Path(val)
            kw["companion"] = fio.read_imputed_path(p if p.is_absolute() else base_dir / p, name)
        else:
            raise ConfigError(f"covariate {name!r}: unknown option {tok!r}")
    return CovariateSpec(**kw)


def load_specs(cfg) -> list[CovariateSpec]:
    if not cfg.has_section("covariates") or not cfg.options("covariates"):
        raise ConfigError("[covariates] must list at least one covariate")
    return [parse_spec(k, cfg.get("covariates", k), cfg.base_dir) for k in cfg.options("covariates")]


def load_track(cfg) -> Track:
    tracks = fio.read_tracks(_path(cfg, "data", "telemetry"))
    want = cfg.get("data", "track", fallback=None)
    if want is None:
        return tracks[0]
    for tr in tracks:
        if tr.id == want:
            return tr
    raise ConfigError(f"track {want!r} not found; available: {[t.id for t in tracks]}")


def model_config(cfg, grid=None, specs=None) -> ModelConfig:
    grid = grid or load_grid(cfg)
    imp = cfg["imputation"] if cfg.has_section("imputation") else {}
    params = None
    ppath = _path(cfg, "imputation", "params", required=False) if imp else None
    if ppath is not None:
        params = CtcrwParams.from_dict(fio.read_json(ppath))
    delta = imp.get("delta") if imp else None
    return ModelConfig(
        grid, specs or load_specs(cfg), load_spline(cfg), ctcrw=params,
        delta=float(delta) if delta else None,
        estimate_obs_sd=cfg.getboolean("imputation", "estimate_obs_sd", fallback=True),
        use_censored_tail=cfg.getboolean("imputation", "use_censored_tail", fallback=False),
        clip_to_grid=cfg.getboolean("imputation", "clip_to_grid", fallback=True),
    )


def _K(cfg) -> int:
    K = cfg.getint("imputation", "K", fallback=1)
    if K < 1:
        raise ConfigError("[imputation] K must be >= 1")
    return K


# ---------------------------------------------------------------------------
# beta(t) curves


def beta_curves(columns, spline: SplineConfig | None, mean, cov=None, draws=None, level=0.95) -> dict:
    """Hourly beta(t) for every spline-expanded covariate.

    Bands come from ``cov`` (Gaussian, delta method) or from ``draws``
    (equal-tailed posterior quantiles); with neither, no band is reported.
    """
    if spline is None:
        return {}
    hours = np.arange(24.0)
    t = hours * 3600.0 * (spline.period / 86400.0)
    phi = spline_basis(spline, t)
    groups: dict = {}
    for j, c in enumerate(columns):
        base, sep, _ = c.rpartition(":s")
        if sep:
            groups.setdefault(base, []).append(j)
    out = {}
    for name, idx in groups.items():
        est = phi @ np.asarray(mean)[idx]
        curve = {"hour": hours, "estimate": est}
        if draws is not None:
            lo, hi = equal_tailed(draws[:, idx] @ phi.T, level)
            curve.update(lower=lo, upper=hi)
        elif cov is not None:
            sub = np.asarray(cov)[np.ix_(idx, idx)]
            se = np.sqrt(np.einsum("ti,ij,tj->t", phi, sub, phi))
            q = norm.ppf(0.5 + level / 2)
            curve.update(lower=est - q * se, upper=est + q * se)
        out[name] = curve
    return out


def write_curves(path, curves: dict) -> None:
    rows = []
    for name, c in curves.items():
        for k in range(len(c["hour"])):
            row = {"covariate": name, "hour": float(c["hour"][k]), "estimate": float(c["estimate"][k])}
            if "lower" in c:
                row.update(lower=float(c["lower"][k]), upper=float(c["upper"][k]))
            rows.append(row)
    fio.write_rows(path, rows, ["covariate", "hour", "estimate", "lower", "upper"])


# ---------------------------------------------------------------------------
# subcommands


def cmd_impute(cfg, out: Path) -> dict:
    """Fit (or load) CTCRW parameters and write K imputed paths."""
    track = load_track(cfg)
    config = model_config(cfg)
    params = fitted_params(track, config)
    delta = config.resolved_delta(track)
    pdir = out / "paths"
    pdir.mkdir(exist_ok=True)
    files = []
    for k, child in enumerate(seeds(_stream(cfg, "impute"), _K(cfg))):
        ip = draw_path(track, params, delta, seed=child)
        f = pdir / f"path_{k:03d}.csv"
        fio.write_imputed_path(f, k, ip)
        files.append(f)
    fio.write_json(out / "ctcrw_params.json", params.to_dict())
    return {"params": params, "files": files}


def cmd_discretize(cfg, out: Path) -> dict:
    """Discretize imputed paths (``[discretize] paths`` or ``<output>/paths``) and build designs."""
    grid = load_grid(cfg)
    specs = load_specs(cfg)
    spline = load_spline(cfg)
    src = _path(cfg, "discretize", "paths", required=False) if cfg.has_section("discretize") else None
    src = src or out / "paths"
    files = sorted(src.glob("*.csv")) if src.is_dir() else [src]
    if not files or not files[0].is_file():
        raise FileNotFoundError(f"no imputed path files in {src}")
    ddir, xdir = out / "discrete", out / "designs"
    ddir.mkdir(exist_ok=True)
    xdir.mkdir(exist_ok=True)
    tail = cfg.getboolean("imputation", "use_censored_tail", fallback=False)
    clip = cfg.getboolean("imputation", "clip_to_grid", fallback=True)
    written = []
    for k, f in enumerate(files):
        ip = fio.read_imputed_path(f)
        dp = discretize(clip_path(ip, grid) if clip else ip, grid)
        fio.write_discrete_path(ddir / f"discrete_{k:03d}.csv", dp)
        design = build_design(dp, grid, specs, spline, use_censored_tail=tail)
        fio.write_design(xdir / f"design_{k:03d}.csv", design)
        written.append(dp)
    return {"discrete": written}


def _designs(cfg, K=None):
    track = load_track(cfg)
    config = model_config(cfg)
    params, paths, dps, designs = impute_designs(track, config, K or _K(cfg), seed=_stream(cfg, "impute"))
    return track, config, params, designs


def _cv_settings(cfg):
    return (cfg.getint("fit", "n_folds", fallback=10), cfg.get("fit", "cv_rule", fallback="1se"))


def cmd_cv(cfg, out: Path) -> dict:
    """Cross-validated lasso on the stacked imputations; records the penalty for bayes-lasso."""
    _, config, params, designs = _designs(cfg)
    n_folds, rule = _cv_settings(cfg)
    fit = cv_lasso(stack_designs(designs), n_folds, seed=_stream(cfg, "cv"), rule=rule)
    report = {
        "estimator": "stacked-lasso", "K": len(designs), "gamma_lasso": fit.penalty,
        "cv_rule": rule, "n_folds": n_folds, "columns": fit.columns,
        "estimate": fit.beta_hat, "scale": fit.scale, "active_set": fit.active_set,
        "kkt_residual": fit.kkt_residual, "cv_curve": fit.cv_curve, "ctcrw": params.to_dict(),
    }
    fio.write_json(out / "cv.json", report)
    if _figures(cfg):
        from .plots import plot_cv_curve

        plot_cv_curve(out / "cv_curve.png", fit.cv_curve)
    return report


def _lasso_gamma(cfg) -> tuple[float, list | None]:
    """Penalty for the Bayesian lasso: explicit ``gamma_lasso`` or a prior cv report."""
    explicit = cfg.get("fit", "gamma_lasso", fallback=None)
    if explicit:
        return float(explicit), None
    path = _path(cfg, "fit", "cv_report", required=False) if cfg.has_section("fit") else None
    if path is None or not path.is_file():
        raise ConfigError(
            "bayes-lasso needs the lasso penalty: run `ctdsmove cv` first and set "
            "[fit] cv_report = <output>/cv.json, or set [fit] gamma_lasso explicitly"
        )
    rep = fio.read_json(path)
    return float(rep["gamma_lasso"]), rep.get("scale")


def _bayes(cfg, out: Path, lasso: bool) -> dict:
    track = load_track(cfg)
    config = model_config(cfg)
    b = cfg["bayes"] if cfg.has_section("bayes") else {}
    n_iter = int(b.get("n_iter", 20000))
    n_burn = int(b["n_burn"]) if "n_burn" in b else None
    prior_var = float(b.get("prior_var", 100.0))
    if lasso:
        gamma, scale = _lasso_gamma(cfg)
        prior = LaplacePrior(gamma, prior_var, tuple(scale) if scale is not None else None)
    else:
        prior = GaussianPrior(prior_var)
    params = fitted_params(track, config)
    chain = composition_sample(track, config, prior, _K(cfg), n_iter, n_burn, seed=_stream(cfg, "bayes"), params=params)
    summary = chain.summary()
    curves = beta_curves(chain.columns, config.spline, chain.draws.mean(axis=0), draws=chain.draws)
    report = {
        "estimator": "bayes-lasso" if lasso else "bayes", "K": _K(cfg), "n_iter": n_iter,
        "n_burn": n_iter // 4 if n_burn is None else n_burn, "prior": type(prior).__name__,
        "gamma_lasso": getattr(prior, "gamma_lasso", None), "acceptance_rate": chain.acceptance_rate,
        "coefficients": summary, "ctcrw": params.to_dict(),
    }
    fio.write_chain(out / "chain.csv", chain.draws, chain.columns)
    fio.write_json(out / "summary.json", report)
    fio.write_rows(out / "coefficients.csv", summary)
    if curves:
        write_curves(out / "beta_curves.csv", curves)
    if _figures(cfg):
        from .plots import plot_beta_curves, plot_traces

        plot_traces(out / "traces.png", chain.draws, chain.columns)
        if curves:
            plot_beta_curves(out / "beta_curves.png", curves)
    return report


def cmd_bayes(cfg, out: Path) -> dict:
    prior = cfg.get("bayes", "prior", fallback="gaussian")
    if prior not in ("gaussian", "laplace"):
        raise ConfigError(f"[bayes] prior must be gaussian or laplace, got {prior!r}")
    return _bayes(cfg, out, lasso=prior == "laplace")


def cmd_fit(cfg, out: Path) -> dict:
    """Fit with the configured estimator and write the coefficient report."""
    est = cfg.get("fit", "estimator", fallback="mle")
    if est not in ESTIMATORS:
        raise ConfigError(f"unknown estimator {est!r}; expected one of {ESTIMATORS}")
    if est in ("bayes", "bayes-lasso"):
        if est == "bayes-lasso":
            _lasso_gamma(cfg)  # fail before any imputation work
        return _bayes(cfg, out, lasso=est == "bayes-lasso")
    _, config, params, designs = _designs(cfg)
    n_folds, rule = _cv_settings(cfg)
    cv_seed = _stream(cfg, "cv")
    report = {"estimator": est, "K": len(designs), "ctcrw": params.to_dict()}
    curves = {}
    if est == "mle":
        fits = [fit_irls(d) for d in designs]
        if len(fits) == 1:
            f = fits[0]
            mean, cov = f.beta_hat, f.covariance
            report.update(loglik=f.loglik, converged=f.converged, n_iter=f.n_iter)
            lo, hi = gaussian_interval(mean, f.std_err)
            table = [
                {"covariate": c, "estimate": float(m), "se": float(s), "lower": float(a),
                 "upper": float(b), "starred": bool(a > 0 or b < 0)}
                for c, m, s, a, b in zip(f.columns, mean, f.std_err, lo, hi)
            ]
        else:
            pooled = pool(fits, cfg.getboolean("fit", "finite_k_correction", fallback=True))
            mean, cov = pooled.mean, pooled.covariance
            table = pooled.table()
            report.update(correction=pooled.correction, within=pooled.within, between=pooled.between,
                          loglik=[f.loglik for f in fits])
        report["coefficients"] = table
        curves = beta_curves(designs[0].columns, config.spline, mean, cov=cov)
    else:
        if est == "stacked-lasso":
            fits = [cv_lasso(stack_designs(designs), n_folds, seed=cv_seed, rule=rule)]
        else:
            fits = [cv_lasso(d, n_folds, seed=s, rule=rule) for d, s in zip(designs, seeds(cv_seed, len(designs)))]
        mean = np.mean([f.beta_hat for f in fits], axis=0)
        table = [{"covariate": c, "estimate": float(m), "nonzero_share": float(np.mean([f.beta_hat[j] != 0 for f in fits]))}
                 for j, (c, m) in enumerate(zip(fits[0].columns, mean))]
        report.update(
            coefficients=table, cv_rule=rule, n_folds=n_folds,
            gamma_lasso=[f.penalty for f in fits] if len(fits) > 1 else fits[0].penalty,
            cv_curve=[f.cv_curve for f in fits] if len(fits) > 1 else fits[0].cv_curve,
            kkt_residual=max(f.kkt_residual for f in fits),
        )
        curves = beta_curves(fits[0].columns, config.spline, mean)
    fio.write_json(out / "fit_report.json", report)
    fio.write_rows(out / "coefficients.csv", report["coefficients"])
    if curves:
        write_curves(out / "beta_curves.csv", curves)
    if _figures(cfg):
        from .plots import plot_beta_curves, plot_coefficients, plot_cv_curve

        icpt = {sp.name for sp in config.specs if sp.kind == "intercept"}
        shown = [r for r in report["coefficients"] if r["covariate"].split(":s")[0] not in icpt]
        if shown:
            plot_coefficients(out / "coefficients.png", shown)
        if curves:
            plot_beta_curves(out / "beta_curves.png", curves)
        if est != "mle":
            cvc = report["cv_curve"]
            plot_cv_curve(out / "cv_curve.png", cvc[0] if isinstance(cvc, list) else cvc)
    return report


def _truth_vector(cfg, evaluator) -> np.ndarray:
    """Coefficients from ``[truth]``: ``name = value`` or ``name = a1,a2,...`` for spline specs."""
    if not cfg.has_section("truth"):
        raise ConfigError("[truth] must give the coefficients to simulate from")
    beta = np.zeros(evaluator.n_cols)
    for spec in evaluator.specs:
        raw = cfg.get("truth", spec.name, fallback=None)
        if raw is None:
            raise ConfigError(f"[truth] has no value for covariate {spec.name!r}")
        vals = np.array([float(v) for v in raw.split(",")])
        sl = evaluator.slices[spec.name]
        n = sl.stop - sl.start
        if vals.size not in (1, n):
            raise ConfigError(f"[truth] {spec.name}: expected 1 or {n} values, got {vals.size}")
        # a single value for a spline spec gives a constant beta(t) (partition of unity)
        beta[sl] = vals if vals.size == n else np.full(n, vals[0])
    return beta


def cmd_simulate(cfg, out: Path) -> dict:
    """Simulate a CTDS path, thin it to telemetry, and record the truth.

    ``[simulate]`` keys: ``span``, ``t0``, ``interval``, ``jitter_sd``,
    ``start_row``, ``start_col``, and for a synthetic landscape (used when
    ``[layers]`` is absent) ``n_rows``, ``n_cols``, ``cell_size``,
    ``n_features``.
    """
    from .design import CovariateEvaluator
    from .discretize import cell_center_trace
    from .simulate import SimConfig, simulate_ctds, synthetic_landscape, thin_to_track

    s = cfg["simulate"] if cfg.has_section("simulate") else {}
    land_seed, sim_seed, thin_seed = seeds(_stream(cfg, "simulate"), 3)
    if cfg.has_section("layers"):
        grid = load_grid(cfg)
    else:
        grid = synthetic_landscape(int(s.get("n_rows", 50)), int(s.get("n_cols", 50)),
                                   float(s.get("cell_size", 100.0)), int(s.get("n_features", 6)),
                                   seed=land_seed)
        ldir = out / "layers"
        ldir.mkdir(exist_ok=True)
        for name, values in grid.layers.items():
            fio.write_ascii_grid(ldir / f"{name}.asc", grid, values)
    specs = load_specs(cfg)
    spline = load_spline(cfg)
    ev = CovariateEvaluator(grid, specs, spline)
    beta = _truth_vector(cfg, ev)
    t0 = float(s.get("t0", 0.0))
    t1 = t0 + float(s.get("span", 14 * 86400.0))
    start = grid.cell_index(int(s.get("start_row", grid.n_rows // 2)), int(s.get("start_col", grid.n_cols // 2)))
    interval = float(s.get("interval", 14400.0))
    dp = simulate_ctds(SimConfig(grid, specs, beta, start, t0, t1, spline, interval, seed=sim_seed), ev)
    track = thin_to_track(dp, grid, interval, float(s.get("jitter_sd", 0.0)), seed=thin_seed,
                          track_id=cfg.get("data", "track", fallback="sim"))
    fio.write_tracks(out / "telemetry.csv", [track])
    fio.write_discrete_path(out / "true_discrete_path.csv", dp)
    truth = {"columns": ev.columns, "coefficients": beta, "start_cell": start, "t0": t0, "t1": t1,
             "interval": interval, "n_transitions": dp.n_visits - 1, "seed": _seed(cfg)}
    fio.write_json(out / "truth.json", truth)
    if _figures(cfg):
        from .plots import plot_paths

        plot_paths(out / "simulated_path.png", grid, track, [cell_center_trace(dp, grid)])
    return {"truth": truth, "track": track, "discrete": dp}


def cmd_recovery_study(cfg, out: Path, workers: int = 1) -> dict:
    """Scaled coefficient-recovery study; ``[recovery]`` overrides protocol defaults."""
    from .simulate import RecoveryProtocol, recovery_study

    r = cfg["recovery"] if cfg.has_section("recovery") else {}
    proto = RecoveryProtocol()
    truth = dict(proto.truth)
    if cfg.has_section("truth"):
        for k in truth:
            if cfg.has_option("truth", k):
                truth[k] = cfg.getfloat("truth", k)
    kw = {"truth": truth}
    for key, conv in (("n_rows", int), ("n_cols", int), ("cell_size", float), ("span", float),
                      ("thinning_interval", float), ("jitter_sd", float), ("K", int), ("n_folds", int),
                      ("n_features", int), ("estimator", str), ("cv_rule", str)):
        if key in r:
            kw[key] = conv(r[key])
    proto = RecoveryProtocol(**kw)
    n = int(r.get("n_replicates", 100))
    res = recovery_study(proto, n, seed=_seed(cfg), workers=workers,
                         progress=lambda i: log.info("replicate %d/%d", i + 1, n))
    fio.write_recovery(out / "recovery.csv", res["rows"])
    names = [row["covariate"] for row in res["rows"]]
    fio.write_chain(out / "recovery_estimates.csv", res["estimates"], names)
    fio.write_json(out / "recovery.json", {k: v for k, v in res.items() if k != "estimates"})
    if _figures(cfg):
        from .plots import plot_recovery

        plot_recovery(out / "recovery.png", names, res["estimates"], [proto.truth[k] for k in names])
    return res


COMMANDS = {
    "impute": cmd_impute,
    "discretize": cmd_discretize,
    "fit": cmd_fit,
    "cv": cmd_cv,
    "simulate": cmd_simulate,
    "recovery-study": cmd_recovery_study,
    "bayes": cmd_bayes,
}


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(n, 1)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctdsmove", description="CTDS animal-movement models from telemetry.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=(fn.__doc__ or "").strip().split("\n")[0])
        sp.add_argument("config", help="INI run configuration")
        sp.add_argument("-o", "--output", help="output directory (overrides [run] output)")
        sp.add_argument("--threads", type=int, default=None,
                        help=f"worker processes (default ${THREADS_ENV} or 1)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = read_config(args.config)
        out = _output(cfg, args.output)
        fn = COMMANDS[args.command]
        if fn is cmd_recovery_study:
            fn(cfg, out, workers=args.threads or default_threads())
        else:
            fn(cfg, out)
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (ConfigError, configparser.Error, ValueError, RuntimeError, ArithmeticError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
