import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from infbeta.distribution import InflatedBetaParams, sample  # noqa: E402
from infbeta.links import link_inverse  # noqa: E402
from infbeta.numerics import RngStream  # noqa: E402
from infbeta.regression import Dataset, ModelSpec, ParameterVector  # noqa: E402


def random_problem(seed, n=60, p=3, k=3, m=3, c=0, links=("logit", "logit", "log"),
                   theta=None):
    """Random designs, a random interior theta and data simulated from it."""
    rng = RngStream(seed, 0)
    g = rng.generator

    def design(cols):
        return np.column_stack([np.ones(n)] + [g.normal(0, 1, n) for _ in range(cols - 1)])

    V, X, Z = design(p), design(k), design(m)
    if theta is None:
        rho = np.concatenate([[-0.8], g.normal(0, 0.4, p - 1)])
        beta = np.concatenate([[-0.3], g.normal(0, 0.4, k - 1)])
        gamma = np.concatenate([[2.5], g.normal(0, 0.3, m - 1)])
        if links[2] == "sqrt":
            gamma = np.concatenate([[3.5], g.normal(0, 0.2, m - 1)])
        theta = ParameterVector(rho, beta, gamma)
    spec = ModelSpec(c, V, X, Z, *links)
    alpha = link_inverse(spec.link_alpha, V @ theta.rho)
    mu = link_inverse(spec.link_mu, X @ theta.beta)
    phi = link_inverse(spec.link_phi, Z @ theta.gamma)
    y = sample(rng, InflatedBetaParams(c, alpha, mu, phi))
    return spec, Dataset(y, c), theta


@pytest.fixture
def problem():
    return random_problem(123)


def planted_outlier(seed, n=50, k=3, m=1, shift=6.0):
    """A random problem with one interior response moved ``shift`` sd on the logit scale.

    Returns (spec, contaminated data, planted index). The case and the
    direction are drawn from ``np.random.default_rng(seed)``.
    """
    from infbeta.distribution import conditional_moments

    spec, data, th = random_problem(1000 + seed, n=n, k=k, m=m)
    g = np.random.default_rng(seed)
    inner = np.flatnonzero(data.interior)
    t = int(g.choice(inner))
    sign = 1.0 if g.random() < 0.5 else -1.0
    mu = link_inverse(spec.link_mu, spec.X[t] @ th.beta)
    phi = link_inverse(spec.link_phi, spec.Z[t] @ th.gamma)
    cm = conditional_moments(mu, phi)
    y = data.y.copy()
    y[t] = 1.0 / (1.0 + np.exp(-(cm.mu_star + sign * shift * np.sqrt(cm.v_star))))
    return spec, Dataset(y, data.c), t
