"""Link functions for the mixture probability, the beta mean and the precision.

Each link maps its domain onto the real line and is strictly increasing.
``derivatives`` returns (h', h'') evaluated at a point of the domain; the
model code only ever needs 1/h' and h'' in terms of the parameter itself.
"""
from __future__ import annotations

from enum import Enum

import numpy as np
from scipy.special import expit, ndtr, ndtri

from .errors import DomainError

CLAMP = 1e-12
_EXP_MAX = 700.0


class LinkKind(str, Enum):
    LOGIT = "logit"
    PROBIT = "probit"
    CLOGLOG = "cloglog"
    LOGLOG = "loglog"
    LOG = "log"
    SQRT = "sqrt"

    @property
    def unit_domain(self) -> bool:
        """True for links on (0, 1), False for links on (0, inf)."""
        return self in _UNIT_LINKS

    @classmethod
    def parse(cls, name) -> "LinkKind":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise DomainError(f"unknown link {name!r}; expected one of {valid}") from None


_UNIT_LINKS = {LinkKind.LOGIT, LinkKind.PROBIT, LinkKind.CLOGLOG, LinkKind.LOGLOG}

DEFAULT_LINKS = {"alpha": LinkKind.LOGIT, "mu": LinkKind.LOGIT, "phi": LinkKind.LOG}


def _check_domain(kind: LinkKind, x):
    x = np.asarray(x, dtype=float)
    if kind.unit_domain:
        bad = ~((x > 0.0) & (x < 1.0))
    else:
        bad = ~((x > 0.0) & np.isfinite(x))
    if np.any(bad):
        rng = "(0, 1)" if kind.unit_domain else "(0, inf)"
        raise DomainError(f"{kind.value} link argument outside {rng}")
    return x


def _out(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def link_apply(kind, x):
    """eta = h(x)."""
    kind = LinkKind.parse(kind)
    x = _check_domain(kind, x)
    if kind is LinkKind.LOGIT:
        eta = np.log(x) - np.log1p(-x)
    elif kind is LinkKind.PROBIT:
        eta = ndtri(x)
    elif kind is LinkKind.CLOGLOG:
        eta = np.log(-np.log1p(-x))
    elif kind is LinkKind.LOGLOG:
        eta = -np.log(-np.log(x))
    elif kind is LinkKind.LOG:
        eta = np.log(x)
    else:
        eta = np.sqrt(x)
    return _out(eta)


def link_inverse(kind, eta):
    """x = h^{-1}(eta), clamped into the open domain at a 1e-12 margin."""
    kind = LinkKind.parse(kind)
    eta = np.asarray(eta, dtype=float)
    if np.any(np.isnan(eta)):
        raise DomainError("linear predictor contains NaN")
    if kind is LinkKind.LOGIT:
        x = expit(eta)
    elif kind is LinkKind.PROBIT:
        x = ndtr(eta)
    elif kind is LinkKind.CLOGLOG:
        x = -np.expm1(-np.exp(np.minimum(eta, _EXP_MAX)))
    elif kind is LinkKind.LOGLOG:
        x = np.exp(-np.exp(np.minimum(-eta, _EXP_MAX)))
    elif kind is LinkKind.LOG:
        x = np.exp(np.minimum(eta, _EXP_MAX))
    else:
        if np.any(eta < 0):
            raise DomainError("sqrt link cannot invert a negative predictor")
        x = eta * eta
    if kind.unit_domain:
        x = np.clip(x, CLAMP, 1.0 - CLAMP)
    else:
        x = np.maximum(x, CLAMP)
    return _out(x)


def link_derivatives(kind, x):
    """First and second derivatives (h'(x), h''(x))."""
    kind = LinkKind.parse(kind)
    x = _check_domain(kind, x)
    if kind is LinkKind.LOGIT:
        v = x * (1.0 - x)
        d1 = 1.0 / v
        d2 = (2.0 * x - 1.0) / (v * v)
    elif kind is LinkKind.PROBIT:
        eta = ndtri(x)
        dens = np.exp(-0.5 * eta * eta) / np.sqrt(2.0 * np.pi)
        d1 = 1.0 / dens
        d2 = eta / (dens * dens)
    elif kind is LinkKind.CLOGLOG:
        s = 1.0 - x
        lg = -np.log1p(-x)
        d1 = 1.0 / (s * lg)
        d2 = (lg - 1.0) / (s * s * lg * lg)
    elif kind is LinkKind.LOGLOG:
        lg = -np.log(x)
        d1 = 1.0 / (x * lg)
        d2 = (1.0 - lg) / (x * x * lg * lg)
    elif kind is LinkKind.LOG:
        d1 = 1.0 / x
        d2 = -1.0 / (x * x)
    else:
        r = np.sqrt(x)
        d1 = 0.5 / r
        d2 = -0.25 / (x * r)
    return _out(d1), _out(d2)
