"""Residuals, leverage, influence, goodness of fit and simulated envelopes.

Every function takes a converged :class:`~infbeta.regression.FittedModel`
that is still bound to its design and data. Quantities defined only for
observations strictly inside (0, 1) are returned as "interior vectors",
aligned with ``np.flatnonzero(data.interior)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .distribution import InflatedBetaParams, inflated_cdf, sample
from .errors import EstimationError, InfBetaError
from .numerics import RngStream
from .parallel import map_tasks
from .regression import (Dataset, FittedModel, continuous_state,
                         discrete_state, fit, fit_continuous, fit_discrete,
                         loglik_continuous, loglik_discrete, null_spec,
                         _continuous_weights, _discrete_weight)

LEVERAGE_MAX = 1.0 - 1e-10
U_CLAMP = 1e-10
ENVELOPE_MAX_FAIL = 0.2
RESIDUAL_NOTE = (
    "Randomized quantile residuals can be asymmetric for inflated data; "
    "the usual (-2, 2) and (-3, 3) thresholds are a rough guide only.")


def _bound(fitted: FittedModel):
    fitted.require_converged("diagnostics")
    return fitted.require_data()


def projection_matrix(design, weights) -> np.ndarray:
    """W^{1/2} D (D' W D)^{-1} D' W^{1/2} for diagonal weights."""
    q = _whitened_q(design, weights)
    return q @ q.T


def _whitened_q(design, weights):
    wd = np.asarray(design, float) * np.sqrt(np.asarray(weights, float))[:, None]
    q, _ = np.linalg.qr(wd)
    return q


def _hat_diagonal(design, weights):
    q = _whitened_q(design, weights)
    return np.clip(np.einsum("ij,ij->i", q, q), 0.0, 1.0)


def _discrete_weights(fitted):
    spec, _ = fitted.require_data()
    return _discrete_weight(discrete_state(spec.link_alpha, spec.V, fitted.theta.rho))


def _interior_w2(fitted):
    spec, data = fitted.require_data()
    inner = data.interior
    th = fitted.theta
    cs = continuous_state(spec.link_mu, spec.link_phi, spec.X[inner], spec.Z[inner],
                          th.beta, th.gamma)
    w2, _, _ = _continuous_weights(cs, 1.0 - fitted.alpha[inner])
    return spec.X[inner], w2, cs


def discrete_leverage(fitted: FittedModel) -> np.ndarray:
    """Diagonal of the discrete-component hat matrix H (length n)."""
    spec, _ = _bound(fitted)
    return _hat_diagonal(spec.V, _discrete_weights(fitted))


def continuous_leverage(fitted: FittedModel) -> np.ndarray:
    """Diagonal of the generalized leverage matrix P over interior observations."""
    _bound(fitted)
    X, w2, _ = _interior_w2(fitted)
    return _hat_diagonal(X, w2)


def _undefined(values, leverage):
    out = np.asarray(values, float).copy()
    out[leverage >= LEVERAGE_MAX] = np.nan
    return out


def pearson_discrete(yc, alpha, leverage):
    """(1{y = c} - alpha) / sqrt(alpha (1 - alpha) (1 - h)); NaN where h ~ 1."""
    yc, alpha, h = (np.asarray(v, float) for v in (yc, alpha, leverage))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (yc - alpha) / np.sqrt(alpha * (1.0 - alpha) * (1.0 - h))
    return _undefined(r, h)


def pearson_continuous(y_star, mu_star, v_star, alpha, leverage):
    """(y* - mu*) / sqrt(v* (1 - alpha) (1 - P)); NaN where P ~ 1."""
    y_star, mu_star, v_star, alpha, P = (np.asarray(v, float) for v in
                                         (y_star, mu_star, v_star, alpha, leverage))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (y_star - mu_star) / np.sqrt(v_star * (1.0 - alpha) * (1.0 - P))
    return _undefined(r, P)


def cook_distance(leverage, residual, dim):
    """h r^2 / (dim (1 - h)); NaN where the leverage is numerically one."""
    h = np.asarray(leverage, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = h * np.asarray(residual, float) ** 2 / (dim * (1.0 - h))
    return _undefined(out, h)


def pearson_discrete_residuals(fitted: FittedModel, leverage=None) -> np.ndarray:
    """Standardized Pearson residuals of the indicators 1{y == c}."""
    _, data = _bound(fitted)
    h = discrete_leverage(fitted) if leverage is None else leverage
    return pearson_discrete(data.yc, fitted.alpha, h)


def pearson_continuous_residuals(fitted: FittedModel, leverage=None) -> np.ndarray:
    """Standardized Pearson residuals of y* on the interior observations."""
    _, data = _bound(fitted)
    inner = data.interior
    P = continuous_leverage(fitted) if leverage is None else leverage
    _, _, cs = _interior_w2(fitted)
    return pearson_continuous(data.y_star[inner], cs.mu_star, cs.v_star,
                              fitted.alpha[inner], P)


def randomized_quantile_residuals(fitted: FittedModel, rng: RngStream) -> np.ndarray:
    """Phi^{-1}(u_t) with u_t uniform on the jump of the fitted cdf at an atom.

    One uniform is drawn per observation (used only at y == c), so the
    random stream advances by n regardless of the data.
    """
    _, data = _bound(fitted)
    c = fitted.c
    params = InflatedBetaParams(c, fitted.alpha, fitted.mu, fitted.phi)
    upper = np.asarray(inflated_cdf(data.y, params), float)
    # left limit of the cdf at y = c: 0 for c = 0, 1 - alpha for c = 1
    lower = np.where(data.yc == 1.0, upper - fitted.alpha, upper)
    v = rng.uniform(size=data.n)
    u = np.where(data.yc == 1.0, lower + (upper - lower) * (1.0 - v), upper)
    return ndtri(np.clip(u, U_CLAMP, 1.0 - U_CLAMP))


def cook_statistics(fitted: FittedModel):
    """Approximate likelihood displacements (c_D over all n, c_C over interior)."""
    spec, _ = _bound(fitted)
    h = discrete_leverage(fitted)
    P = continuous_leverage(fitted)
    c_d = cook_distance(h, pearson_discrete_residuals(fitted, h), spec.p)
    c_c = cook_distance(P, pearson_continuous_residuals(fitted, P), spec.k + spec.m)
    return c_d, c_c


def case_deletion_displacement(fitted: FittedModel):
    """Exact likelihood displacements by deleting each case and refitting.

    Returns (LD_D over all n, LD_C over interior observations). The deleted
    estimates are plugged into the full-data component log-likelihoods;
    refits that fail give NaN.
    """
    spec, data = _bound(fitted)
    th = fitted.theta
    p, km = spec.p, spec.k + spec.m
    l1 = fitted.loglik_discrete
    l2 = fitted.loglik_continuous
    vt0 = np.concatenate([th.beta, th.gamma])
    ld_d = np.full(data.n, np.nan)
    inner_idx = np.flatnonzero(data.interior)
    ld_c = np.full(inner_idx.size, np.nan)
    for t in range(data.n):
        keep = np.ones(data.n, dtype=bool)
        keep[t] = False
        sub_spec, sub_data = spec.subset(keep), data.subset(keep)
        try:
            rho_t = fit_discrete(sub_spec, sub_data, init=th.rho).params
            ld_d[t] = 2.0 / p * (l1 - loglik_discrete(spec, data, rho_t))
        except InfBetaError:
            pass
    for j, t in enumerate(inner_idx):
        keep = np.ones(data.n, dtype=bool)
        keep[t] = False
        try:
            vt = fit_continuous(spec.subset(keep), data.subset(keep), init=vt0).params
            ld_c[j] = 2.0 / km * (l2 - loglik_continuous(spec, data, vt[:spec.k], vt[spec.k:]))
        except InfBetaError:
            pass
    return ld_d, ld_c


@dataclass(frozen=True)
class PseudoR2:
    corr: float
    mcfadden: float
    cox_snell: float


def fitted_means(fitted: FittedModel) -> np.ndarray:
    """c alpha + (1 - alpha) mu per observation."""
    return fitted.c * fitted.alpha + (1.0 - fitted.alpha) * fitted.mu


def squared_correlation(y, pred) -> float:
    """Squared sample correlation; NaN if either vector is constant."""
    y, pred = np.asarray(y, float), np.asarray(pred, float)
    if np.ptp(pred) == 0 or np.ptp(y) == 0:
        return float("nan")
    return float(np.corrcoef(y, pred)[0, 1] ** 2)


def null_fit(fitted: FittedModel) -> FittedModel:
    """The intercept-only model (constant alpha, mu, phi) on the same data."""
    spec, data = fitted.require_data()
    return fit(null_spec(spec), data)


def pseudo_r2(fitted: FittedModel, null: Optional[FittedModel] = None) -> PseudoR2:
    """Squared correlation, McFadden and Cox-Snell pseudo R^2.

    McFadden's ratio is taken literally, so it can leave [0, 1] when the
    log-likelihoods are positive (densities above one). If the null model
    cannot be fitted only the correlation measure is reported.
    """
    _, data = _bound(fitted)
    corr = squared_correlation(data.y, fitted_means(fitted))
    if null is None:
        try:
            null = null_fit(fitted)
        except EstimationError as exc:
            warnings.warn(f"null model failed to fit ({exc}); likelihood-based "
                          "pseudo R^2 not available", RuntimeWarning, stacklevel=2)
            return PseudoR2(corr, float("nan"), float("nan"))
    l0, l1 = null.loglik, fitted.loglik
    mcf = 1.0 - l1 / l0 if l0 != 0 else float("nan")
    cox = -math.expm1(2.0 / data.n * (l0 - l1))
    return PseudoR2(corr, float(mcf), float(cox))


@dataclass(frozen=True)
class InformationCriteria:
    AIC: float
    SBC: float
    CAIC: float
    GAIC: float
    penalty: float


def gaic(loglik: float, d: int, penalty: float) -> float:
    """Fitted deviance -2 l plus d times the penalty."""
    return -2.0 * loglik + d * penalty


def information_criteria(fitted: FittedModel, penalty: float = 2.0) -> InformationCriteria:
    fitted.require_converged("information criteria")
    d = sum(fitted.dims)
    n = fitted.n
    ln = math.log(n)
    return InformationCriteria(
        AIC=gaic(fitted.loglik, d, 2.0), SBC=gaic(fitted.loglik, d, ln),
        CAIC=gaic(fitted.loglik, d, ln + 1.0), GAIC=gaic(fitted.loglik, d, penalty),
        penalty=float(penalty))


class EnvelopeError(EstimationError):
    def __init__(self, message):
        super().__init__("envelope", message)


@dataclass(frozen=True)
class Envelope:
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    band: float
    n_sim: int
    n_failed: int

    def coverage(self, residuals) -> float:
        """Fraction of sorted residuals inside the band, rank by rank."""
        r = np.sort(np.asarray(residuals, float))
        return float(np.mean((r >= self.lower) & (r <= self.upper)))


def _envelope_draw(task):
    fitted, stream = task
    spec, _ = fitted.require_data()
    params = InflatedBetaParams(fitted.c, fitted.alpha, fitted.mu, fitted.phi)
    y = sample(stream, params)
    try:
        refit = fit(spec, Dataset(y, fitted.c), init=fitted.theta)
    except EstimationError:
        return None
    return np.sort(randomized_quantile_residuals(refit, stream))


def simulated_envelope(fitted: FittedModel, rng: RngStream, n_sim: int = 100,
                       band: float = 0.95, workers: Optional[int] = None) -> Envelope:
    """Pointwise band for sorted quantile residuals under the fitted model.

    Simulation j draws a response from the fitted model with ``rng.spawn(j)``,
    refits (warm-started at the original estimate) and sorts the new
    quantile residuals. Failed refits are skipped; more than 20% failures
    raise EnvelopeError.
    """
    _bound(fitted)
    if n_sim < 1 or not 0 < band < 1:
        raise ValueError("need n_sim >= 1 and 0 < band < 1")
    tasks = [(fitted, rng.spawn(j)) for j in range(n_sim)]
    sims = [s for s in map_tasks(_envelope_draw, tasks, workers) if s is not None]
    failed = n_sim - len(sims)
    if failed > ENVELOPE_MAX_FAIL * n_sim:
        raise EnvelopeError(f"{failed} of {n_sim} simulated refits failed")
    sims = np.array(sims)
    lo, mid, hi = np.quantile(sims, [(1.0 - band) / 2.0, 0.5, (1.0 + band) / 2.0], axis=0)
    return Envelope(lo, mid, hi, band, n_sim, failed)


@dataclass
class DiagnosticsReport:
    interior: np.ndarray
    r_pD: np.ndarray
    r_pC: np.ndarray
    r_q: np.ndarray
    r_q_realizations: np.ndarray
    h_tt: np.ndarray
    P_tt: np.ndarray
    c_D: np.ndarray
    c_C: np.ndarray
    pseudo_r2: PseudoR2
    criteria: InformationCriteria
    envelope: Optional[Envelope] = None
    notes: list = field(default_factory=lambda: [RESIDUAL_NOTE])


def diagnose(fitted: FittedModel, rng: RngStream, realizations: int = 4,
             n_sim: int = 100, band: float = 0.95, penalty: float = 2.0,
             workers: Optional[int] = None) -> DiagnosticsReport:
    """Full diagnostic report; ``n_sim=0`` skips the envelope.

    Residual realization j uses ``rng.spawn(0).spawn(j)`` and the envelope
    uses ``rng.spawn(1)``, so each piece is reproducible on its own.
    """
    _, data = _bound(fitted)
    h = discrete_leverage(fitted)
    P = continuous_leverage(fitted)
    res_rng = rng.spawn(0)
    rq = np.array([randomized_quantile_residuals(fitted, res_rng.spawn(j))
                   for j in range(max(realizations, 1))])
    c_d, c_c = cook_statistics(fitted)
    env = simulated_envelope(fitted, rng.spawn(1), n_sim, band, workers) if n_sim else None
    return DiagnosticsReport(
        interior=np.flatnonzero(data.interior),
        r_pD=pearson_discrete_residuals(fitted, h),
        r_pC=pearson_continuous_residuals(fitted, P),
        r_q=rq[0], r_q_realizations=rq, h_tt=h, P_tt=P, c_D=c_d, c_C=c_c,
        pseudo_r2=pseudo_r2(fitted), criteria=information_criteria(fitted, penalty),
        envelope=env)
