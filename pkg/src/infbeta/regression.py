"""Zero-or-one inflated beta regression with linear predictors.

The likelihood factorizes into a binary-regression part for the mixture
probability (parameters ``rho``) and a beta-regression part over the
observations strictly inside (0, 1) (parameters ``beta`` and ``gamma``).
The two parts are fitted independently by Fisher scoring written as
re-weighted least squares.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import chi2, norm

from .distribution import conditional_moments
from .errors import (CollinearityError, ConvergenceError, DegenerateDataError,
                     DomainError, EstimationError, InvalidParameterError)
from .links import LinkKind, link_apply, link_derivatives, link_inverse
from .numerics import log_gamma, whitened_solve

STEP_TOL = 1e-8
LOGLIK_RTOL = 1e-10
SCORE_TOL = 1e-5
MAX_ITER = 100
MAX_HALVINGS = 20
INIT_SHRINK = 0.5
SEPARATION_TOL = 1e-8
SCORING_WARMUP = 5
# larger precisions overflow the squared weights
PHI_MAX = 1e100


# ---------------------------------------------------------------------------
# model description
# ---------------------------------------------------------------------------

def _design(arr, n=None, name="design"):
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DomainError(f"{name} must be a 2-D matrix")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    return arr


def _names(names, ncol, prefix):
    if names is None:
        return tuple(f"{prefix}{j}" for j in range(ncol))
    names = tuple(str(s) for s in names)
    if len(names) != ncol:
        raise DomainError(f"expected {ncol} column names for {prefix}, got {len(names)}")
    return names


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Inflation point, links and the three design matrices.

    ``V`` drives the mixture probability alpha, ``X`` the beta mean mu and
    ``Z`` the precision phi.
    """

    c: int
    V: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    link_alpha: LinkKind = LinkKind.LOGIT
    link_mu: LinkKind = LinkKind.LOGIT
    link_phi: LinkKind = LinkKind.LOG
    names_alpha: Optional[Sequence[str]] = None
    names_mu: Optional[Sequence[str]] = None
    names_phi: Optional[Sequence[str]] = None

    def __post_init__(self):
        if self.c not in (0, 1):
            raise DomainError("inflation point c must be 0 or 1")
        V = _design(self.V, name="V")
        X = _design(self.X, name="X")
        Z = _design(self.Z, name="Z")
        if not (V.shape[0] == X.shape[0] == Z.shape[0]):
            raise DomainError("V, X and Z must have the same number of rows")
        la, lm, lp = (LinkKind.parse(k) for k in (self.link_alpha, self.link_mu, self.link_phi))
        if not la.unit_domain or not lm.unit_domain:
            raise DomainError("alpha and mu links must map (0, 1)")
        if lp.unit_domain:
            raise DomainError("phi link must map (0, inf)")
        for name, mat in (("V", V), ("X", X), ("Z", Z)):
            if np.linalg.matrix_rank(mat) < mat.shape[1]:
                raise CollinearityError(name, f"design {name} does not have full column rank")
        set_ = object.__setattr__
        set_(self, "V", V)
        set_(self, "X", X)
        set_(self, "Z", Z)
        set_(self, "link_alpha", la)
        set_(self, "link_mu", lm)
        set_(self, "link_phi", lp)
        set_(self, "names_alpha", _names(self.names_alpha, V.shape[1], "v"))
        set_(self, "names_mu", _names(self.names_mu, X.shape[1], "x"))
        set_(self, "names_phi", _names(self.names_phi, Z.shape[1], "z"))

    @property
    def n(self):
        return self.V.shape[0]

    @property
    def p(self):
        return self.V.shape[1]

    @property
    def k(self):
        return self.X.shape[1]

    @property
    def m(self):
        return self.Z.shape[1]

    @property
    def dim(self):
        return self.p + self.k + self.m

    def subset(self, rows) -> "ModelSpec":
        """Same model restricted to a subset of rows (no rank re-check is skipped)."""
        return replace(self, V=self.V[rows], X=self.X[rows], Z=self.Z[rows])


def null_spec(spec: ModelSpec) -> ModelSpec:
    """Intercept-only model with the same inflation point and links."""
    ones = np.ones((spec.n, 1))
    return replace(spec, V=ones, X=ones, Z=ones, names_alpha=("(Intercept)",),
                   names_mu=("(Intercept)",), names_phi=("(Intercept)",))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Responses with the derived indicator and log transforms.

    ``y_star`` and ``y_dagger`` are exactly zero at inflated observations.
    """

    y: np.ndarray
    c: int
    yc: np.ndarray = field(init=False)
    interior: np.ndarray = field(init=False)
    y_star: np.ndarray = field(init=False)
    y_dagger: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.c not in (0, 1):
            raise DomainError("inflation point c must be 0 or 1")
        y = np.asarray(self.y, dtype=float).ravel()
        at_c = y == self.c
        inner = (y > 0) & (y < 1)
        bad = np.flatnonzero(~(at_c | inner))
        if bad.size:
            raise DomainError(
                f"observations outside (0,1) U {{{self.c}}} at positions {bad.tolist()[:10]}")
        y_star = np.zeros_like(y)
        y_dag = np.zeros_like(y)
        y_star[inner] = np.log(y[inner]) - np.log1p(-y[inner])
        y_dag[inner] = np.log1p(-y[inner])
        set_ = object.__setattr__
        set_(self, "y", y)
        set_(self, "yc", at_c.astype(float))
        set_(self, "interior", inner)
        set_(self, "y_star", y_star)
        set_(self, "y_dagger", y_dag)

    @property
    def n(self):
        return self.y.size

    def subset(self, rows) -> "Dataset":
        return Dataset(self.y[rows], self.c)


@dataclass(frozen=True)
class ParameterVector:
    rho: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.rho, self.beta, self.gamma])

    @classmethod
    def from_flat(cls, spec: ModelSpec, theta) -> "ParameterVector":
        if isinstance(theta, ParameterVector):
            theta = theta.flat
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != spec.dim:
            raise DomainError(f"parameter vector has length {theta.size}, expected {spec.dim}")
        p, k = spec.p, spec.k
        return cls(theta[:p].copy(), theta[p:p + k].copy(), theta[p + k:].copy())


def _check_pair(spec: ModelSpec, data: Dataset):
    if spec.n != data.n:
        raise DomainError(f"design has {spec.n} rows but data has {data.n} observations")
    if spec.c != data.c:
        raise DomainError("model and data disagree on the inflation point")


# ---------------------------------------------------------------------------
# per-observation quantities
# ---------------------------------------------------------------------------

@dataclass
class DiscreteState:
    eta: np.ndarray
    alpha: np.ndarray
    d: np.ndarray        # d alpha / d eta = 1 / h1'(alpha)
    h2: np.ndarray       # h1''(alpha)
    hprime: np.ndarray


def discrete_state(link: LinkKind, V, rho) -> DiscreteState:
    eta = V @ rho
    alpha = np.asarray(link_inverse(link, eta), dtype=float)
    hp, hpp = link_derivatives(link, alpha)
    hp = np.asarray(hp, float)
    return DiscreteState(eta, alpha, 1.0 / hp, np.asarray(hpp, float), hp)


@dataclass
class ContinuousState:
    eta_mu: np.ndarray
    eta_phi: np.ndarray
    mu: np.ndarray
    phi: np.ndarray
    t: np.ndarray        # 1 / h2'(mu)
    h: np.ndarray        # 1 / h3'(phi)
    h2pp: np.ndarray
    h3pp: np.ndarray
    mu_star: np.ndarray
    mu_dagger: np.ndarray
    v_star: np.ndarray
    v_dagger: np.ndarray
    c_sd: np.ndarray


def continuous_state(link_mu, link_phi, X, Z, beta, gamma) -> ContinuousState:
    eta2 = X @ beta
    eta3 = Z @ gamma
    mu = np.atleast_1d(np.asarray(link_inverse(link_mu, eta2), dtype=float))
    phi = np.atleast_1d(np.asarray(link_inverse(link_phi, eta3), dtype=float))
    if not np.all(phi < PHI_MAX):
        raise InvalidParameterError("precision overflow")
    d2, dd2 = link_derivatives(link_mu, mu)
    d3, dd3 = link_derivatives(link_phi, phi)
    cm = conditional_moments(mu, phi)
    return ContinuousState(
        eta2, eta3, mu, phi, 1.0 / np.asarray(d2, float), 1.0 / np.asarray(d3, float),
        np.asarray(dd2, float), np.asarray(dd3, float),
        *(np.atleast_1d(np.asarray(v, float)) for v in
          (cm.mu_star, cm.mu_dagger, cm.v_star, cm.v_dagger, cm.c_star_dagger)))


def _loglik_discrete_terms(yc, alpha):
    return yc * np.log(alpha) + (1.0 - yc) * np.log1p(-alpha)


def _loglik_continuous_terms(y_star, y_dag, mu, phi):
    a = mu * phi
    return (log_gamma(phi) - log_gamma(a) - log_gamma(phi - a)
            + (a - 1.0) * y_star + (phi - 2.0) * y_dag)


def loglik_discrete(spec: ModelSpec, data: Dataset, rho) -> float:
    alpha = np.asarray(link_inverse(spec.link_alpha, spec.V @ np.asarray(rho, float)))
    val = float(np.sum(_loglik_discrete_terms(data.yc, alpha)))
    if not math.isfinite(val):
        raise InvalidParameterError("non-finite discrete log-likelihood")
    return val


def loglik_continuous(spec: ModelSpec, data: Dataset, beta, gamma) -> float:
    inner = data.interior
    if not np.any(inner):
        return 0.0
    mu = np.atleast_1d(link_inverse(spec.link_mu, spec.X[inner] @ np.asarray(beta, float)))
    phi = np.atleast_1d(link_inverse(spec.link_phi, spec.Z[inner] @ np.asarray(gamma, float)))
    val = float(np.sum(_loglik_continuous_terms(data.y_star[inner], data.y_dagger[inner], mu, phi)))
    if not math.isfinite(val):
        raise InvalidParameterError("non-finite continuous log-likelihood")
    return val


def log_likelihood(spec: ModelSpec, data: Dataset, theta) -> float:
    """l(theta) = l1(rho) + l2(beta, gamma)."""
    _check_pair(spec, data)
    th = ParameterVector.from_flat(spec, theta)
    return loglik_discrete(spec, data, th.rho) + loglik_continuous(spec, data, th.beta, th.gamma)


# ---------------------------------------------------------------------------
# score and information
# ---------------------------------------------------------------------------

def _score_discrete(V, yc, ds: DiscreteState):
    return V.T @ ((yc - ds.alpha) / (ds.alpha * (1.0 - ds.alpha)) * ds.d)


def _score_continuous_parts(cs: ContinuousState, y_star, y_dag, mask):
    r_star = np.where(mask, y_star - cs.mu_star, 0.0)
    r_dag = np.where(mask, y_dag - cs.mu_dagger, 0.0)
    u_beta = cs.t * cs.phi * r_star
    u_gamma = cs.h * (cs.mu * r_star + r_dag)
    return u_beta, u_gamma, r_star, r_dag


def score(spec: ModelSpec, data: Dataset, theta) -> np.ndarray:
    """Analytic score (U_rho, U_beta, U_gamma)."""
    _check_pair(spec, data)
    th = ParameterVector.from_flat(spec, theta)
    ds = discrete_state(spec.link_alpha, spec.V, th.rho)
    cs = continuous_state(spec.link_mu, spec.link_phi, spec.X, spec.Z, th.beta, th.gamma)
    u_beta, u_gamma, _, _ = _score_continuous_parts(cs, data.y_star, data.y_dagger, data.interior)
    return np.concatenate([_score_discrete(spec.V, data.yc, ds),
                           spec.X.T @ u_beta, spec.Z.T @ u_gamma])


def _continuous_weights(cs: ContinuousState, factor):
    """Per-observation expected-information weights W2, W3, W4."""
    w2 = cs.phi ** 2 * cs.t ** 2 * cs.v_star * factor
    w3 = cs.t * cs.h * cs.phi * (cs.mu * cs.v_star + cs.c_sd) * factor
    w4 = cs.h ** 2 * (cs.mu ** 2 * cs.v_star + 2.0 * cs.mu * cs.c_sd + cs.v_dagger) * factor
    return w2, w3, w4


def _discrete_weight(ds: DiscreteState):
    return ds.d ** 2 / (ds.alpha * (1.0 - ds.alpha))


@dataclass
class InformationBlocks:
    K_rr: np.ndarray
    K_bb: np.ndarray
    K_bg: np.ndarray
    K_gg: np.ndarray

    def full(self) -> np.ndarray:
        p, k, m = self.K_rr.shape[0], self.K_bb.shape[0], self.K_gg.shape[0]
        out = np.zeros((p + k + m, p + k + m))
        out[:p, :p] = self.K_rr
        out[p:p + k, p:p + k] = self.K_bb
        out[p:p + k, p + k:] = self.K_bg
        out[p + k:, p:p + k] = self.K_bg.T
        out[p + k:, p + k:] = self.K_gg
        return out


def information_blocks(spec: ModelSpec, theta) -> InformationBlocks:
    th = ParameterVector.from_flat(spec, theta)
    ds = discrete_state(spec.link_alpha, spec.V, th.rho)
    cs = continuous_state(spec.link_mu, spec.link_phi, spec.X, spec.Z, th.beta, th.gamma)
    return _blocks(spec, _discrete_weight(ds), *_continuous_weights(cs, 1.0 - ds.alpha))


def _blocks(spec, w1, w2, w3, w4):
    V, X, Z = spec.V, spec.X, spec.Z
    for w in (w1, w2, w3, w4):
        if not np.all(np.isfinite(w)):
            raise InvalidParameterError("non-finite information weights")
    return InformationBlocks(V.T @ (w1[:, None] * V), X.T @ (w2[:, None] * X),
                             X.T @ (w3[:, None] * Z), Z.T @ (w4[:, None] * Z))


def fisher_information(spec: ModelSpec, theta) -> np.ndarray:
    """Expected information K(theta), block diagonal between rho and (beta, gamma)."""
    return information_blocks(spec, theta).full()


def inverse_information(blocks: InformationBlocks) -> np.ndarray:
    """K^{-1} through the partitioned-inverse formulas."""
    p, k, m = blocks.K_rr.shape[0], blocks.K_bb.shape[0], blocks.K_gg.shape[0]
    out = np.zeros((p + k + m, p + k + m))
    out[:p, :p] = _sym_inv(blocks.K_rr, "rho")
    gg_inv = _sym_inv(blocks.K_gg, "gamma")
    schur = blocks.K_bb - blocks.K_bg @ gg_inv @ blocks.K_bg.T
    bb = _sym_inv(schur, "beta")
    gb = -gg_inv @ blocks.K_bg.T @ bb
    gg = gg_inv + gg_inv @ blocks.K_bg.T @ bb @ blocks.K_bg @ gg_inv
    out[p:p + k, p:p + k] = bb
    out[p + k:, p:p + k] = gb
    out[p:p + k, p + k:] = gb.T
    out[p + k:, p + k:] = 0.5 * (gg + gg.T)
    return out


def _sym_inv(a, block):
    a = 0.5 * (a + a.T)
    sv = np.linalg.svd(a, compute_uv=False)
    if not np.all(np.isfinite(sv)) or sv[-1] <= 1e-12 * sv[0]:
        raise CollinearityError(block, "information block is singular or ill-conditioned")
    inv = np.linalg.inv(a)
    return 0.5 * (inv + inv.T)


def observed_information(spec: ModelSpec, data: Dataset, theta) -> np.ndarray:
    """J(theta) = minus the Hessian of the log-likelihood (linear predictors)."""
    _check_pair(spec, data)
    th = ParameterVector.from_flat(spec, theta)
    ds = discrete_state(spec.link_alpha, spec.V, th.rho)
    cs = continuous_state(spec.link_mu, spec.link_phi, spec.X, spec.Z, th.beta, th.gamma)
    yc, a = data.yc, ds.alpha
    # second derivative of alpha with respect to eta1
    d2a = -ds.h2 * ds.d ** 3
    dl = (yc - a) / (a * (1.0 - a))
    d2l = -yc / a ** 2 - (1.0 - yc) / (1.0 - a) ** 2
    j_rr = -(d2l * ds.d ** 2 + dl * d2a)

    mask = data.interior
    _, _, r_star, r_dag = _score_continuous_parts(cs, data.y_star, data.y_dagger, mask)
    j_bb, j_bg, j_gg = (np.where(mask, w, 0.0) for w in _observed_weights(cs, r_star, r_dag))
    return _blocks(spec, j_rr, j_bb, j_bg, j_gg).full()


def _observed_weights(cs: ContinuousState, r_star, r_dag):
    """Per-observation entries of minus the (eta2, eta3) Hessian of l2."""
    mu, phi = cs.mu, cs.phi
    l_mu = phi * r_star
    l_phi = mu * r_star + r_dag
    l_mumu = -phi ** 2 * cs.v_star
    l_muphi = r_star - phi * (mu * cs.v_star + cs.c_sd)
    l_phiphi = -(mu ** 2 * cs.v_star + 2.0 * mu * cs.c_sd + cs.v_dagger)
    d2mu = -cs.h2pp * cs.t ** 3
    d2phi = -cs.h3pp * cs.h ** 3
    return (-(l_mumu * cs.t ** 2 + l_mu * d2mu), -(l_muphi * cs.t * cs.h),
            -(l_phiphi * cs.h ** 2 + l_phi * d2phi))


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

@dataclass
class ComponentFit:
    """Outcome of one component's Fisher-scoring loop."""

    params: np.ndarray
    iterations: int
    converged: bool
    loglik: float
    score_norm: float
    message: str = ""


def _stopped(step, ll_old, ll_new, score_norm):
    small_step = step < STEP_TOL
    flat = abs(ll_new - ll_old) <= LOGLIK_RTOL * max(1.0, abs(ll_old))
    return (small_step or flat) and score_norm < SCORE_TOL


def _scoring_loop(theta, evaluate, max_iter):
    """Generic safeguarded Fisher scoring.

    ``evaluate(theta, it)`` returns (loglik, score, direction) for the step
    taken at iteration ``it``; the direction solves K(theta) d = U(theta)
    (or J d = U once Newton steps are allowed). Steps that lower the
    log-likelihood or leave the parameter space are halved up to
    MAX_HALVINGS times.
    """
    ll, u, direction = evaluate(theta, 1)
    if _stopped(np.inf, ll, ll, np.max(np.abs(u), initial=0.0)) and np.max(np.abs(direction), initial=0.0) < STEP_TOL:
        return ComponentFit(theta, 0, True, ll, float(np.max(np.abs(u), initial=0.0)))
    for it in range(1, max_iter + 1):
        lam = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            cand = theta + lam * direction
            try:
                with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                    ll_new, u_new, dir_new = evaluate(cand, it + 1)
            except (DomainError, InvalidParameterError, CollinearityError,
                    FloatingPointError, np.linalg.LinAlgError):
                ll_new = -np.inf
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * max(1.0, abs(ll)):
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            snorm = float(np.max(np.abs(u), initial=0.0))
            fit = ComponentFit(theta, it, False, ll, snorm,
                               "step-halving failed to increase the log-likelihood")
            if snorm < SCORE_TOL:
                fit.converged = True
                fit.message = ""
            return fit
        step = float(np.max(np.abs(cand - theta), initial=0.0))
        ll_old = ll
        theta, ll, u, direction = cand, ll_new, u_new, dir_new
        snorm = float(np.max(np.abs(u), initial=0.0))
        if _stopped(step, ll_old, ll, snorm):
            return ComponentFit(theta, it, True, ll, snorm)
    return ComponentFit(theta, max_iter, False, ll, float(np.max(np.abs(u), initial=0.0)),
                        f"no convergence in {max_iter} iterations")


def _initial_rho(spec: ModelSpec, data: Dataset):
    smoothed = INIT_SHRINK * 0.5 + (1.0 - INIT_SHRINK) * data.yc
    target = np.asarray(link_apply(spec.link_alpha, smoothed), float)
    return whitened_solve(spec.V, target, "rho")


def fit_discrete(spec: ModelSpec, data: Dataset, init=None, max_iter=MAX_ITER) -> ComponentFit:
    """Fit rho by re-weighted least squares on the indicators 1{y == c}."""
    _check_pair(spec, data)
    n_c = int(data.yc.sum())
    if n_c == 0 or n_c == data.n:
        raise DegenerateDataError(
            "discrete", "need at least one observation at c and one away from c")
    V, yc, link = spec.V, data.yc, spec.link_alpha

    def evaluate(rho, it):
        ds = discrete_state(link, V, rho)
        ll = float(np.sum(_loglik_discrete_terms(yc, ds.alpha)))
        w = _discrete_weight(ds)
        root = np.sqrt(w)
        # working-response increment W1^{-1} A D A* (y^c - alpha) = (y^c - alpha) h1'
        resid = (yc - ds.alpha) * ds.hprime
        u = _score_discrete(V, yc, ds)
        direction = whitened_solve(V * root[:, None], resid * root, "rho")
        return ll, u, direction

    rho0 = _initial_rho(spec, data) if init is None else np.asarray(init, float).copy()
    try:
        fit = _scoring_loop(rho0, evaluate, max_iter)
    except CollinearityError as exc:
        raise ConvergenceError(
            "discrete", f"weights collapsed ({exc}); fitted probabilities pinned "
            "at 0 or 1 suggest separation") from exc
    alpha = np.asarray(link_inverse(link, V @ fit.params))
    pinned = np.any((alpha <= SEPARATION_TOL) | (alpha >= 1 - SEPARATION_TOL))
    if pinned:
        # the score vanishes as probabilities run off to 0 or 1, so a
        # "converged" fit can still be a divergent one
        fit = replace(fit, converged=False)
        raise ConvergenceError(
            "discrete", "separation: fitted probabilities within "
            f"{SEPARATION_TOL:g} of 0 or 1 (score sup-norm {fit.score_norm:.3g})",
            result=fit)
    if not fit.converged:
        raise ConvergenceError("discrete", fit.message, result=fit)
    return fit


def _newton_direction(X, Z, weights, u):
    """J^{-1} U when J is safely positive definite, else None."""
    j_bb, j_bg, j_gg = weights
    J = np.block([[X.T @ (j_bb[:, None] * X), X.T @ (j_bg[:, None] * Z)],
                  [Z.T @ (j_bg[:, None] * X), Z.T @ (j_gg[:, None] * Z)]])
    if not np.all(np.isfinite(J)):
        return None
    evals = np.linalg.eigvalsh(J)
    if evals[0] <= 1e-8 * evals[-1]:
        return None
    return np.linalg.solve(J, u)


def _initial_continuous(spec: ModelSpec, X, Z, y):
    beta0 = whitened_solve(X, np.asarray(link_apply(spec.link_mu, y), float), "beta")
    ybar = float(np.mean(y))
    s2 = float(np.var(y, ddof=1)) if y.size > 1 else 0.0
    phi0 = ybar * (1.0 - ybar) / s2 - 1.0 if s2 > 0 else 1.0
    phi0 = max(phi0, 0.1)
    target = np.full(y.size, float(link_apply(spec.link_phi, phi0)))
    gamma0 = whitened_solve(Z, target, "gamma")
    return np.concatenate([beta0, gamma0])


def fit_continuous(spec: ModelSpec, data: Dataset, init=None, max_iter=MAX_ITER) -> ComponentFit:
    """Joint Fisher scoring for (beta, gamma) on the observations in (0, 1).

    The stacked 2n-row least-squares system is whitened observation by
    observation with the Cholesky factor of the 2x2 weight block. Scoring
    only converges linearly here (the rate is the spectral radius of
    I - K^{-1} J, which nears one in small samples), so after
    SCORING_WARMUP iterations Newton steps on the observed information are
    used whenever it is positive definite. Step-halving guards both.
    """
    _check_pair(spec, data)
    inner = data.interior
    k, m = spec.k, spec.m
    if int(inner.sum()) < k + m:
        raise DegenerateDataError(
            "continuous", f"need at least {k + m} observations in (0,1), have {int(inner.sum())}")
    X, Z = spec.X[inner], spec.Z[inner]
    y_star, y_dag = data.y_star[inner], data.y_dagger[inner]
    ones = np.ones(y_star.size, dtype=bool)
    lm, lp = spec.link_mu, spec.link_phi

    def evaluate(vt, it):
        beta, gamma = vt[:k], vt[k:]
        cs = continuous_state(lm, lp, X, Z, beta, gamma)
        ll = float(np.sum(_loglik_continuous_terms(y_star, y_dag, cs.mu, cs.phi)))
        if not math.isfinite(ll):
            raise InvalidParameterError("non-finite continuous log-likelihood")
        u_b, u_g, r_star, r_dag = _score_continuous_parts(cs, y_star, y_dag, ones)
        u = np.concatenate([X.T @ u_b, Z.T @ u_g])
        if it > SCORING_WARMUP:
            newton = _newton_direction(X, Z, _observed_weights(cs, r_star, r_dag), u)
            if newton is not None:
                return ll, u, newton
        w2, w3, w4 = _continuous_weights(cs, 1.0)
        l11 = np.sqrt(w2)
        l21 = w3 / l11
        l22 = np.sqrt(np.maximum(w4 - l21 ** 2, 1e-300))
        top = np.hstack([X * l11[:, None], Z * l21[:, None]])
        bottom = np.hstack([np.zeros_like(X), Z * l22[:, None]])
        r1 = u_b / l11
        r2 = (u_g - l21 * r1) / l22
        direction = whitened_solve(np.vstack([top, bottom]), np.concatenate([r1, r2]),
                                   "beta,gamma")
        return ll, u, direction

    if init is None:
        vt0 = _initial_continuous(spec, X, Z, data.y[inner])
    else:
        vt0 = np.asarray(init, float).copy()
    fit = _scoring_loop(vt0, evaluate, max_iter)
    if not fit.converged:
        raise ConvergenceError("continuous", fit.message, result=fit)
    return fit


# ---------------------------------------------------------------------------
# fitted model
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FittedModel:
    """Maximum likelihood fit with the inverse expected information.

    Components that failed to fit carry NaN parameters; ``discrete`` and
    ``continuous`` keep the per-component convergence record.
    """

    spec: Optional[ModelSpec]
    data: Optional[Dataset]
    theta: ParameterVector
    inv_information: np.ndarray
    loglik: float
    loglik_discrete: float
    loglik_continuous: float
    alpha: np.ndarray
    mu: np.ndarray
    phi: np.ndarray
    eta1: np.ndarray
    eta2: np.ndarray
    eta3: np.ndarray
    discrete: ComponentFit
    continuous: ComponentFit
    config: Optional[dict] = None
    c: int = 0
    links: tuple = (LinkKind.LOGIT, LinkKind.LOGIT, LinkKind.LOG)
    names: tuple = ((), (), ())
    data_fingerprint: Optional[str] = None   # set when loaded from a model file

    @property
    def converged(self) -> bool:
        return self.discrete.converged and self.continuous.converged

    @property
    def dims(self):
        return (self.theta.rho.size, self.theta.beta.size, self.theta.gamma.size)

    @property
    def n(self):
        return self.alpha.size

    def require_converged(self, what="inference"):
        if not self.converged:
            parts = []
            for name, comp in (("discrete", self.discrete), ("continuous", self.continuous)):
                if not comp.converged:
                    parts.append(f"{name}: {comp.message or 'not converged'} "
                                 f"(score sup-norm {comp.score_norm:.3g})")
            raise ConvergenceError(what, "model did not converge; " + "; ".join(parts))

    def require_data(self):
        if self.spec is None or self.data is None:
            raise DomainError("fitted model is not bound to a dataset")
        return self.spec, self.data


class FitError(EstimationError):
    """One or both components failed; ``partial`` holds what was fitted."""

    def __init__(self, errors, partial):
        self.errors = errors
        self.partial = partial
        self.component = ",".join(errors)
        # component errors already carry their "[component]" prefix
        Exception.__init__(self, "; ".join(str(e) for e in errors.values()))


def _failed_fit(exc, size):
    res = getattr(exc, "result", None)
    if res is not None:
        return ComponentFit(np.full(size, np.nan), res.iterations, False, np.nan,
                            res.score_norm, str(exc))
    return ComponentFit(np.full(size, np.nan), 0, False, np.nan, np.nan, str(exc))


def assemble(spec: ModelSpec, data: Dataset, disc: ComponentFit, cont: ComponentFit,
             config=None) -> FittedModel:
    """Build a FittedModel from the two component fits."""
    p, k = spec.p, spec.k
    rho, vt = disc.params, cont.params
    theta = ParameterVector(rho.copy(), vt[:k].copy(), vt[k:].copy())
    dim = spec.dim
    inv = np.full((dim, dim), np.nan)
    inv[:p, p:] = 0.0
    inv[p:, :p] = 0.0
    nan_n = np.full(spec.n, np.nan)
    alpha = eta1 = mu = phi = eta2 = eta3 = nan_n
    if disc.converged:
        ds = discrete_state(spec.link_alpha, spec.V, rho)
        alpha, eta1 = ds.alpha, ds.eta
        w1 = _discrete_weight(ds)
        inv[:p, :p] = _sym_inv(spec.V.T @ (w1[:, None] * spec.V), "rho")
    if cont.converged:
        cs = continuous_state(spec.link_mu, spec.link_phi, spec.X, spec.Z, theta.beta, theta.gamma)
        mu, phi, eta2, eta3 = cs.mu, cs.phi, cs.eta_mu, cs.eta_phi
        # expected information weights carry the probability 1 - alpha of
        # falling in (0, 1); without a discrete fit use the observed indicator
        factor = (1.0 - alpha) if disc.converged else (1.0 - data.yc)
        w2, w3, w4 = _continuous_weights(cs, factor)
        blocks = InformationBlocks(np.eye(p), spec.X.T @ (w2[:, None] * spec.X),
                                   spec.X.T @ (w3[:, None] * spec.Z),
                                   spec.Z.T @ (w4[:, None] * spec.Z))
        inv[p:, p:] = inverse_information(blocks)[p:, p:]
    ll = disc.loglik + cont.loglik
    return FittedModel(
        spec=spec, data=data, theta=theta, inv_information=inv, loglik=ll,
        loglik_discrete=disc.loglik, loglik_continuous=cont.loglik,
        alpha=alpha, mu=mu, phi=phi, eta1=eta1, eta2=eta2, eta3=eta3,
        discrete=disc, continuous=cont, config=config, c=spec.c,
        links=(spec.link_alpha, spec.link_mu, spec.link_phi),
        names=(tuple(spec.names_alpha), tuple(spec.names_mu), tuple(spec.names_phi)))


def fit(spec: ModelSpec, data: Dataset, init: Optional[ParameterVector] = None,
        config=None, max_iter=MAX_ITER) -> FittedModel:
    """Fit both components independently and assemble the result.

    Raises FitError (with ``partial``) when either component fails; the
    other component's estimates are kept in the partial model.
    """
    _check_pair(spec, data)
    # checked here rather than on ModelSpec so tiny files still load
    if spec.dim >= spec.n:
        raise DomainError(f"need fewer parameters ({spec.dim}) than observations ({spec.n})")
    if init is not None:
        init = ParameterVector.from_flat(spec, init)
    errors = {}
    try:
        disc = fit_discrete(spec, data, None if init is None else init.rho, max_iter=max_iter)
    except EstimationError as exc:
        errors["discrete"] = exc
        disc = _failed_fit(exc, spec.p)
    try:
        cont = fit_continuous(spec, data,
                              None if init is None else np.concatenate([init.beta, init.gamma]),
                              max_iter=max_iter)
    except EstimationError as exc:
        errors["continuous"] = exc
        cont = _failed_fit(exc, spec.k + spec.m)
    fitted = assemble(spec, data, disc, cont, config)
    if errors:
        raise FitError(errors, fitted)
    return fitted


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoefficientRow:
    component: str
    name: str
    estimate: float
    se: float
    z: float
    p_value: float
    lower: float
    upper: float


def normal_quantile(q):
    return float(ndtri(q))


def inference_summary(fitted: FittedModel, varsigma=0.05):
    """Wald table: estimate, s.e., z, two-sided p and the 100(1 - varsigma)% interval."""
    fitted.require_converged("inference")
    if not 0 < varsigma < 1:
        raise DomainError("varsigma must lie in (0, 1)")
    zq = normal_quantile(1.0 - varsigma / 2.0)
    est = fitted.theta.flat
    se = np.sqrt(np.diag(fitted.inv_information))
    labels = ([("alpha", s) for s in fitted.names[0]] + [("mu", s) for s in fitted.names[1]]
              + [("phi", s) for s in fitted.names[2]])
    rows = []
    for (comp, name), b, s in zip(labels, est, se):
        z = b / s
        p = 2.0 * norm.sf(abs(z))
        rows.append(CoefficientRow(comp, name, float(b), float(s), float(z), float(p),
                                   float(b - zq * s), float(b + zq * s)))
    return rows


@dataclass(frozen=True)
class MeanResponseCI:
    point: float
    se: float
    lower: float
    upper: float


def mean_response_ci(fitted: FittedModel, v, x, varsigma=0.05) -> MeanResponseCI:
    """Delta-method interval for E(y) = c alpha + (1 - alpha) mu at covariates (v, x)."""
    fitted.require_converged("mean response")
    if not 0 < varsigma < 0.5:
        raise DomainError("varsigma must lie in (0, 1/2)")
    p, k, _ = fitted.dims
    v = np.asarray(v, float).ravel()
    x = np.asarray(x, float).ravel()
    if v.size != p or x.size != k:
        raise DomainError("covariate vectors do not match the model dimensions")
    la, lm, _ = fitted.links
    alpha = float(link_inverse(la, v @ fitted.theta.rho))
    mu = float(link_inverse(lm, x @ fitted.theta.beta))
    c = fitted.c
    point = c * alpha + (1.0 - alpha) * mu
    k_rr = fitted.inv_information[:p, :p]
    k_bb = fitted.inv_information[p:p + k, p:p + k]
    ha, _ = link_derivatives(la, alpha)
    hm, _ = link_derivatives(lm, mu)
    var = ((c - mu) / ha) ** 2 * (v @ k_rr @ v) + ((1.0 - alpha) / hm) ** 2 * (x @ k_bb @ x)
    se = math.sqrt(max(var, 0.0))
    zq = normal_quantile(1.0 - varsigma / 2.0)
    return MeanResponseCI(point, se, point - zq * se, point + zq * se)


@dataclass(frozen=True)
class LikelihoodRatioTest:
    statistic: float
    df: int
    p_value: float


def chi2_sf(x, df):
    return float(chi2.sf(x, df))


def likelihood_ratio_test(full: FittedModel, restricted: FittedModel) -> LikelihoodRatioTest:
    """2 (l_full - l_restricted) against chi-square with the parameter-count difference."""
    full.require_converged("likelihood ratio test")
    restricted.require_converged("likelihood ratio test")
    if full.c != restricted.c or full.links != restricted.links or full.n != restricted.n:
        raise DomainError("models differ in inflation point, links or sample size")
    for big, small in zip(full.names, restricted.names):
        if not set(small) <= set(big):
            raise DomainError("restricted model is not nested in the full model")
    if full.data is not None and restricted.data is not None:
        if not np.array_equal(full.data.y, restricted.data.y):
            raise DomainError("models were fitted to different responses")
    df = sum(len(b) for b in full.names) - sum(len(s) for s in restricted.names)
    stat = 2.0 * (full.loglik - restricted.loglik)
    if stat < 0 and stat > -1e-8:
        stat = 0.0
    p = 1.0 if df == 0 else chi2_sf(max(stat, 0.0), df)
    return LikelihoodRatioTest(stat, df, p)
