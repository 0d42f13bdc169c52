"""The zero-or-one inflated beta distribution.

A point mass ``alpha`` at ``c`` (0 or 1) mixed with a beta law in
mean-precision form on the open unit interval. Parameter fields may be
scalars or equally shaped arrays (one entry per observation).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .numerics import (RngStream, beta_sample, digamma, log_gamma,
                       regularized_incomplete_beta, trigamma)


def _out(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def _check_mu_phi(mu, phi):
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(~((mu > 0) & (mu < 1))):
        raise DomainError("mu must lie in (0, 1)")
    if np.any(~((phi > 0) & np.isfinite(phi))):
        raise DomainError("phi must be finite and > 0")
    return mu, phi


@dataclass(frozen=True)
class InflatedBetaParams:
    c: int
    alpha: float
    mu: float
    phi: float

    def __post_init__(self):
        if self.c not in (0, 1):
            raise DomainError("inflation point c must be 0 or 1")
        alpha = np.asarray(self.alpha, dtype=float)
        if np.any(~((alpha > 0) & (alpha < 1))):
            raise DomainError("alpha must lie in (0, 1)")
        _check_mu_phi(self.mu, self.phi)

    @property
    def shapes(self):
        """Beta shapes (mu*phi, (1-mu)*phi)."""
        mu = np.asarray(self.mu, float)
        phi = np.asarray(self.phi, float)
        return _out(mu * phi), _out((1.0 - mu) * phi)


@dataclass(frozen=True)
class ConditionalMoments:
    """Moments of y* = log(y/(1-y)) and y+ = log(1-y) given y in (0, 1)."""

    mu_star: np.ndarray
    mu_dagger: np.ndarray
    v_star: np.ndarray
    v_dagger: np.ndarray
    c_star_dagger: np.ndarray


def beta_log_density(y, mu, phi):
    y = np.asarray(y, dtype=float)
    if np.any(~((y > 0) & (y < 1))):
        raise DomainError("beta density is defined on the open interval (0, 1)")
    mu, phi = _check_mu_phi(mu, phi)
    a = mu * phi
    b = (1.0 - mu) * phi
    out = (log_gamma(phi) - log_gamma(a) - log_gamma(b)
           + (a - 1.0) * np.log(y) + (b - 1.0) * np.log1p(-y))
    return _out(out)


def beta_density(y, mu, phi):
    return _out(np.exp(beta_log_density(y, mu, phi)))


def _split_support(y, c):
    y = np.asarray(y, dtype=float)
    at_c = y == c
    inner = (y > 0) & (y < 1)
    if np.any(~(at_c | inner)):
        other = 1 - c
        raise DomainError(
            f"observation equal to {other} is outside the support of the "
            f"{'zero' if c == 0 else 'one'}-inflated beta distribution")
    return y, at_c, inner


def inflated_log_density(y, params: InflatedBetaParams):
    y, at_c, inner = _split_support(y, params.c)
    alpha, mu, phi = np.broadcast_arrays(y, np.asarray(params.alpha, float),
                                         np.asarray(params.mu, float),
                                         np.asarray(params.phi, float))[1:]
    out = np.empty(y.shape, dtype=float)
    out[at_c] = np.log(alpha[at_c])
    if np.any(inner):
        out[inner] = np.log1p(-alpha[inner]) + beta_log_density(
            y[inner], mu[inner], phi[inner])
    return _out(out)


def inflated_density(y, params: InflatedBetaParams):
    """alpha at y == c, (1 - alpha) f(y; mu, phi) on (0, 1)."""
    return _out(np.exp(inflated_log_density(y, params)))


def beta_cdf(y, mu, phi):
    mu, phi = _check_mu_phi(mu, phi)
    return regularized_incomplete_beta(y, mu * phi, (1.0 - mu) * phi)


def inflated_cdf(y, params: InflatedBetaParams):
    """alpha * 1{y >= c} + (1 - alpha) F(y; mu, phi)."""
    y = np.asarray(y, dtype=float)
    if np.any(~((y >= 0) & (y <= 1))):
        raise DomainError("y must lie in [0, 1]")
    alpha = np.asarray(params.alpha, float)
    jump = (y >= params.c).astype(float)
    out = alpha * jump + (1.0 - alpha) * beta_cdf(y, params.mu, params.phi)
    return _out(np.clip(out, 0.0, 1.0))


def moments(params: InflatedBetaParams):
    """Mean and variance of the mixture."""
    alpha = np.asarray(params.alpha, float)
    mu = np.asarray(params.mu, float)
    phi = np.asarray(params.phi, float)
    c = params.c
    mean = alpha * c + (1.0 - alpha) * mu
    var = (1.0 - alpha) * mu * (1.0 - mu) / (phi + 1.0) + alpha * (1.0 - alpha) * (c - mu) ** 2
    return _out(mean), _out(var)


def conditional_moments(mu, phi) -> ConditionalMoments:
    """Conditional means, variances and covariance of y* and y+.

    Var(y*) is psi'(mu phi) + psi'((1 - mu) phi): the variance of a
    difference of log-gamma-type variables, so both trigamma terms add.
    """
    mu, phi = _check_mu_phi(mu, phi)
    a = mu * phi
    b = (1.0 - mu) * phi
    dg_a, dg_b, dg_phi = digamma(a), digamma(b), digamma(phi)
    tg_a, tg_b, tg_phi = trigamma(a), trigamma(b), trigamma(phi)
    return ConditionalMoments(
        mu_star=_out(np.asarray(dg_a - dg_b)),
        mu_dagger=_out(np.asarray(dg_b - dg_phi)),
        v_star=_out(np.asarray(tg_a + tg_b)),
        v_dagger=_out(np.asarray(tg_b - tg_phi)),
        c_star_dagger=_out(np.asarray(-tg_b)),
    )


def sample(rng: RngStream, params: InflatedBetaParams, size=None):
    """Draw from the mixture: exactly c with probability alpha, else a beta draw."""
    alpha = np.asarray(params.alpha, float)
    mu = np.asarray(params.mu, float)
    phi = np.asarray(params.phi, float)
    size_shape = () if size is None else tuple(int(s) for s in np.atleast_1d(size))
    shape = np.broadcast_shapes(alpha.shape, mu.shape, phi.shape, size_shape)
    u = rng.uniform(size=shape)
    a = np.broadcast_to(mu * phi, shape)
    b = np.broadcast_to((1.0 - mu) * phi, shape)
    draws = np.asarray(beta_sample(rng, a, b), dtype=float)
    out = np.where(u < np.broadcast_to(alpha, shape), float(params.c), draws)
    return _out(out)
