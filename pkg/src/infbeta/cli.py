"""Command line interface: ``infbeta fit | diagnose | simulate``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 non-convergence. Every artifact is written deterministically, so two
runs with the same inputs and seed give identical bytes.
"""
from __future__ import annotations

import argparse
import os
import sys
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import norm

from . import __version__
from . import io
from .diagnostics import diagnose, information_criteria, pseudo_r2
from .errors import (ConfigError, DataError, DomainError, EstimationError, InfBetaError,
                     InvalidParameterError)
from .numerics import RngStream
from .regression import FitError, FittedModel, ParameterVector, fit
from .simulate import experiment_from_dict, run_experiment

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FIT = 0, 2, 3, 4
U64_MAX = 2 ** 64 - 1


class _Failure(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _u64(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def coefficient_rows(fitted: FittedModel, confidence: float):
    """Wald table rows; entries of a failed component stay NaN."""
    zq = float(ndtri(0.5 + confidence / 2.0))
    se = np.sqrt(np.diag(fitted.inv_information))
    labels = [(comp, name) for comp, names in zip(io.COMPONENTS, fitted.names)
              for name in names]
    rows = []
    with np.errstate(invalid="ignore", divide="ignore"):
        for (comp, name), b, s in zip(labels, fitted.theta.flat, se):
            z = b / s
            rows.append([comp, name, b, s, z, 2.0 * norm.sf(abs(z)), b - zq * s, b + zq * s])
    return rows


COEF_HEADER = ["component", "parameter", "estimate", "se", "z", "p_value", "lower", "upper"]


def _convergence(fitted: FittedModel):
    return {name: {"converged": comp.converged, "iterations": comp.iterations,
                   "score_norm": comp.score_norm, "message": comp.message}
            for name, comp in (("discrete", fitted.discrete), ("continuous", fitted.continuous))}


def _warm_start(path, spec) -> ParameterVector:
    start = io.load_model(path)
    if start.dims != (spec.p, spec.k, spec.m) or start.names != (
            tuple(spec.names_alpha), tuple(spec.names_mu), tuple(spec.names_phi)):
        raise ConfigError(f"{path}: starting model has a different design")
    if not np.all(np.isfinite(start.theta.flat)):
        raise ConfigError(f"{path}: starting model has missing estimates")
    return start.theta


def cmd_fit(args) -> int:
    config = io.load_config(args.config)
    data, spec = io.load_csv_dataset(args.data, config)
    init = _warm_start(args.init, spec) if args.init else None
    io.ensure_dir(args.out)
    cfg = config.to_dict()
    fingerprint = io.data_fingerprint(spec, data)
    summary = {"n": data.n, "n_at_c": int(data.yc.sum()), "c": spec.c,
               "confidence": config.confidence, "data_fingerprint": fingerprint}
    try:
        fitted = fit(spec, data, init=init, config=cfg)
    except FitError as exc:
        partial = exc.partial
        io.save_model(partial, os.path.join(args.out, "model.json"), cfg)
        io.write_table(os.path.join(args.out, "coefficients.csv"), COEF_HEADER,
                       coefficient_rows(partial, config.confidence))
        summary.update(status="failed", error=str(exc), convergence=_convergence(partial),
                       loglik={"discrete": partial.loglik_discrete,
                               "continuous": partial.loglik_continuous})
        io.write_text(os.path.join(args.out, "summary.json"), io.canonical_json(summary))
        norms = ", ".join(f"{k} score sup-norm {v['score_norm']:.3g} after "
                          f"{v['iterations']} iterations"
                          for k, v in _convergence(partial).items())
        raise _Failure(EXIT_FIT, f"fit did not converge: {exc} ({norms}); "
                                 f"partial results written to {args.out}") from None
    io.save_model(fitted, os.path.join(args.out, "model.json"), cfg)
    io.write_table(os.path.join(args.out, "coefficients.csv"), COEF_HEADER,
                   coefficient_rows(fitted, config.confidence))
    r2 = pseudo_r2(fitted)
    crit = information_criteria(fitted)
    summary.update(
        status="converged",
        loglik={"total": fitted.loglik, "discrete": fitted.loglik_discrete,
                "continuous": fitted.loglik_continuous},
        pseudo_r2={"corr": r2.corr, "mcfadden": r2.mcfadden, "cox_snell": r2.cox_snell},
        criteria={"AIC": crit.AIC, "SBC": crit.SBC, "CAIC": crit.CAIC},
        convergence=_convergence(fitted))
    io.write_text(os.path.join(args.out, "summary.json"), io.canonical_json(summary))
    print(f"converged: loglik {fitted.loglik:.6g}, {sum(fitted.dims)} parameters, "
          f"artifacts in {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------

def normal_scores(n: int) -> np.ndarray:
    """Blom plotting positions Phi^{-1}((i - 3/8) / (n + 1/4))."""
    i = np.arange(1, n + 1)
    return ndtri((i - 0.375) / (n + 0.25))


def cmd_diagnose(args) -> int:
    fitted = io.load_model(args.model)
    if not fitted.config:
        raise ConfigError(f"{args.model}: model file has no config; cannot rebuild the design")
    config = io.ModelConfig.from_dict(fitted.config)
    data, spec = io.load_csv_dataset(args.data, config)
    fitted = io.bind(fitted, spec, data, io.stored_fingerprint(args.model))
    fitted.require_converged("diagnostics")
    report = diagnose(fitted, RngStream(args.seed), realizations=args.realizations,
                      n_sim=args.n_sim, band=args.band, workers=args.workers)
    io.ensure_dir(args.out)
    out = args.out
    obs = np.arange(1, data.n + 1)
    R = report.r_q_realizations

    io.write_table(os.path.join(out, "quantile_residuals.csv"),
                   ["obs", "y"] + [f"r_q{j + 1}" for j in range(R.shape[0])],
                   [[int(t), data.y[i]] + list(R[:, i]) for i, t in enumerate(obs)])
    io.write_table(os.path.join(out, "discrete_residuals.csv"),
                   ["obs", "y", "alpha_hat", "h", "r_pD", "c_D"],
                   [[int(obs[i]), data.y[i], fitted.alpha[i], report.h_tt[i], report.r_pD[i],
                     report.c_D[i]] for i in range(data.n)])
    io.write_table(os.path.join(out, "continuous_residuals.csv"),
                   ["obs", "y", "mu_hat", "P", "r_pC", "c_C"],
                   [[int(obs[t]), data.y[t], fitted.mu[t], report.P_tt[j], report.r_pC[j],
                     report.c_C[j]] for j, t in enumerate(report.interior)])
    observed = np.sort(report.r_q)
    scores = normal_scores(data.n)
    env = report.envelope
    summary = {"seed": args.seed, "n": data.n, "n_interior": int(report.interior.size),
               "realizations": int(R.shape[0]), "notes": report.notes,
               "pseudo_r2": {"corr": report.pseudo_r2.corr,
                             "mcfadden": report.pseudo_r2.mcfadden,
                             "cox_snell": report.pseudo_r2.cox_snell},
               "criteria": {"AIC": report.criteria.AIC, "SBC": report.criteria.SBC,
                            "CAIC": report.criteria.CAIC},
               "max_c_D_obs": int(obs[np.nanargmax(report.c_D)]),
               "max_c_C_obs": (int(obs[report.interior[np.nanargmax(report.c_C)]])
                               if np.any(np.isfinite(report.c_C)) else None)}
    if env is not None:
        io.write_table(os.path.join(out, "envelope.csv"),
                       ["rank", "normal_score", "observed", "lower", "median", "upper"],
                       [[i + 1, scores[i], observed[i], env.lower[i], env.median[i],
                         env.upper[i]] for i in range(data.n)])
        summary["envelope"] = {"band": env.band, "n_sim": env.n_sim,
                               "n_failed": env.n_failed,
                               "coverage": env.coverage(report.r_q)}
    io.write_text(os.path.join(out, "diagnostics.json"), io.canonical_json(summary))
    if args.svg:
        _plots(out, fitted, report, observed, scores)
    print(f"diagnostics for {data.n} observations written to {out}")
    return EXIT_OK


def _plots(out, fitted, report, observed, scores):
    n = fitted.n
    idx = np.arange(1, n + 1)
    inner = report.interior + 1
    svg = io.svg_scatter
    for j, rq in enumerate(report.r_q_realizations):
        svg(os.path.join(out, f"rq_index_{j + 1}.svg"), idx, rq,
            f"Quantile residuals, realization {j + 1}", "index", "r_q", hlines=(-3, 0, 3))
    env = report.envelope
    bands = None if env is None else [env.lower, env.median, env.upper]
    svg(os.path.join(out, "rq_envelope.svg"), scores, observed,
        "Sorted quantile residuals", "normal score", "r_q", bands=bands)
    svg(os.path.join(out, "rpd_index.svg"), idx, report.r_pD, "Discrete residuals",
        "index", "r_pD", hlines=(-2, 0, 2))
    svg(os.path.join(out, "rpd_alpha.svg"), fitted.alpha, report.r_pD,
        "Discrete residuals vs fitted alpha", "alpha_hat", "r_pD", hlines=(-2, 0, 2))
    svg(os.path.join(out, "rpc_index.svg"), inner, report.r_pC, "Continuous residuals",
        "index", "r_pC", hlines=(-2, 0, 2))
    svg(os.path.join(out, "rpc_mu.svg"), fitted.mu[report.interior], report.r_pC,
        "Continuous residuals vs fitted mu", "mu_hat", "r_pC", hlines=(-2, 0, 2))
    svg(os.path.join(out, "cd_index.svg"), idx, report.c_D, "Discrete Cook statistic",
        "index", "c_D")
    svg(os.path.join(out, "cc_index.svg"), inner, report.c_C, "Continuous Cook statistic",
        "index", "c_C")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    raw = io.read_json(args.config)
    config = experiment_from_dict(raw)
    result = run_experiment(config, workers=args.workers)
    io.ensure_dir(args.out)
    header, rows = result.table()
    io.write_table(os.path.join(args.out, "simulation.csv"), header, rows)
    cells = [{"n": cell.n, "alpha": cell.alpha, "replications": int(cell.estimates.shape[0]),
              "failures": cell.failures, "failure_kinds": cell.failure_kinds}
             for cell in result.cells]
    io.write_text(os.path.join(args.out, "simulation.json"),
                  io.canonical_json({"config": raw, "cells": cells}))
    total = sum(c["failures"] for c in cells)
    print(f"{len(cells)} cell(s), {config.replications} replications each, "
          f"{total} failed fit(s); table in {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="infbeta", description="Zero- or one-inflated beta regression.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    f = sub.add_parser("fit", help="fit a model to a CSV file")
    f.add_argument("--config", required=True, help="model config (JSON)")
    f.add_argument("--data", required=True, help="CSV data with a header row")
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--init", help="model file whose estimates start the iterations")
    f.set_defaults(run=cmd_fit)

    d = sub.add_parser("diagnose", help="residuals, influence and envelope for a fitted model")
    d.add_argument("--model", required=True, help="model file written by fit")
    d.add_argument("--data", required=True, help="the CSV the model was fitted on")
    d.add_argument("--seed", required=True, type=_u64, help="seed for randomized residuals")
    d.add_argument("--out", required=True, help="output directory")
    d.add_argument("--n-sim", type=_positive, default=100,
                   help="envelope simulations (0 skips the envelope; default 100)")
    d.add_argument("--band", type=float, default=0.95, help="envelope band (default 0.95)")
    d.add_argument("--realizations", type=int, default=4,
                   help="randomized residual realizations (default 4)")
    d.add_argument("--workers", type=int, default=None, help="worker processes")
    d.add_argument("--svg", action="store_true", help="also write SVG scatter plots")
    d.set_defaults(run=cmd_diagnose)

    s = sub.add_parser("simulate", help="run a Monte Carlo bias/RMSE study")
    s.add_argument("--config", required=True, help="experiment config (JSON)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--workers", type=int, default=None, help="worker processes")
    s.set_defaults(run=cmd_simulate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "diagnose":
        if not 0 < args.band < 1:
            parser.error("--band must lie in (0, 1)")
        if args.realizations < 1:
            parser.error("--realizations must be >= 1")
    try:
        return args.run(args)
    except _Failure as exc:
        code, msg = exc.code, str(exc)
    except ConfigError as exc:
        code, msg = EXIT_USAGE, str(exc)
    except (DataError, DomainError, InvalidParameterError) as exc:
        code, msg = EXIT_DATA, str(exc)
    except EstimationError as exc:
        code, msg = EXIT_FIT, str(exc)
    except InfBetaError as exc:
        code, msg = EXIT_DATA, str(exc)
    print(f"infbeta: error: {msg}", file=sys.stderr)
    return code
