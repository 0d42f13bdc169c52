"""Monte Carlo experiments: bias and root mean squared error of the MLEs.

A design cell is one (sample size, alpha) combination. Replication ``r``
of every cell draws from ``RngStream(seed, r)`` in a fixed order: the X and
Z covariates, then the V covariates, then n uniforms deciding the point
mass, then n beta draws for all observations. Cells that differ only in
alpha therefore share covariates and beta draws (common random numbers),
and results never depend on how replications are spread over workers.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, InfBetaError
from .links import LinkKind, link_apply, link_inverse
from .numerics import RngStream, beta_sample
from .parallel import map_tasks
from .regression import Dataset, FitError, ModelSpec, fit

_GENERATOR = re.compile(r"^\s*(normal|poisson|binomial)\s*(?:\(([^)]*)\))?\s*$")
_DEFAULT_ARGS = {"normal": (0.0, 1.0), "poisson": (1.0,), "binomial": (0.2, 5.0)}


@dataclass(frozen=True)
class CovariateGenerator:
    """normal(mean, sd), poisson(mean) or binomial(prob, trials)."""

    kind: str
    args: tuple

    @classmethod
    def parse(cls, text: str) -> "CovariateGenerator":
        m = _GENERATOR.match(str(text))
        if not m:
            raise ConfigError(f"unknown covariate generator {text!r}")
        kind = m.group(1)
        if m.group(2) is None or not m.group(2).strip():
            args = _DEFAULT_ARGS[kind]
        else:
            try:
                args = tuple(float(a) for a in m.group(2).split(","))
            except ValueError:
                raise ConfigError(f"bad generator arguments in {text!r}") from None
        if len(args) != len(_DEFAULT_ARGS[kind]):
            raise ConfigError(f"{kind} takes {len(_DEFAULT_ARGS[kind])} argument(s)")
        if kind == "binomial" and (not 0 <= args[0] <= 1 or args[1] != int(args[1])
                                   or args[1] < 1):
            raise ConfigError("binomial(prob, trials) needs 0 <= prob <= 1 and integer trials")
        if kind == "normal" and not args[1] > 0:
            raise ConfigError("normal(mean, sd) needs sd > 0")
        if kind == "poisson" and not args[0] >= 0:
            raise ConfigError("poisson(mean) needs mean >= 0")
        return cls(kind, args)

    def draw(self, rng: RngStream, n: int) -> np.ndarray:
        g = rng.generator
        if self.kind == "normal":
            return g.normal(self.args[0], self.args[1], n)
        if self.kind == "poisson":
            return g.poisson(self.args[0], n).astype(float)
        return g.binomial(int(self.args[1]), self.args[0], n).astype(float)

    def __str__(self):
        return f"{self.kind}({','.join(f'{a:g}' for a in self.args)})"


def _generators(items):
    return tuple(g if isinstance(g, CovariateGenerator) else CovariateGenerator.parse(g)
                 for g in items)


@dataclass(frozen=True)
class ExperimentConfig:
    """A simulation study.

    ``rho`` gives a covariate-driven alpha; when it is None the mixture
    probability is constant and each entry of ``alphas`` defines a cell.
    Each covariate list holds the generators of the non-intercept columns.
    """

    beta: tuple
    gamma: tuple
    sample_sizes: tuple
    replications: int
    seed: int
    rho: Optional[tuple] = None
    alphas: tuple = ()
    c: int = 0
    x_covariates: tuple = ("normal(0,1)", "poisson(1)", "binomial(0.2,5)")
    z_covariates: tuple = ("normal(0,1)", "poisson(1)", "binomial(0.2,5)")
    v_covariates: tuple = ("normal(0,1)", "poisson(1)", "binomial(0.2,5)")
    links: tuple = ("logit", "logit", "log")
    name: str = "experiment"
    workers: Optional[int] = field(default=None, compare=False)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "beta", tuple(float(b) for b in self.beta))
        set_(self, "gamma", tuple(float(g) for g in self.gamma))
        set_(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        set_(self, "alphas", tuple(float(a) for a in self.alphas))
        set_(self, "links", tuple(LinkKind.parse(k) for k in self.links))
        for attr in ("x_covariates", "z_covariates", "v_covariates"):
            set_(self, attr, _generators(getattr(self, attr)))
        if self.rho is not None:
            set_(self, "rho", tuple(float(r) for r in self.rho))
        if self.c not in (0, 1):
            raise ConfigError("c must be 0 or 1")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not self.sample_sizes or min(self.sample_sizes) < 1:
            raise ConfigError("need at least one positive sample size")
        if self.seed < 0:
            raise ConfigError("seed must be unsigned")
        if len(self.beta) != len(self.x_covariates) + 1:
            raise ConfigError("beta needs one entry per x covariate plus the intercept")
        if len(self.gamma) != len(self.z_covariates) + 1:
            raise ConfigError("gamma needs one entry per z covariate plus the intercept")
        if self.rho is None:
            if not self.alphas or not all(0 < a < 1 for a in self.alphas):
                raise ConfigError("constant-alpha experiments need alphas in (0, 1)")
        elif len(self.rho) != len(self.v_covariates) + 1:
            raise ConfigError("rho needs one entry per v covariate plus the intercept")
        if not self.links[0].unit_domain or not self.links[1].unit_domain:
            raise ConfigError("alpha and mu links must map (0, 1)")
        if self.links[2].unit_domain:
            raise ConfigError("phi link must map (0, inf)")

    @property
    def constant_alpha(self) -> bool:
        return self.rho is None

    def cells(self):
        """(n, alpha or None) for every design cell, sample size major."""
        if self.constant_alpha:
            return [(n, a) for n in self.sample_sizes for a in self.alphas]
        return [(n, None) for n in self.sample_sizes]

    def true_theta(self, alpha=None) -> np.ndarray:
        rho = ((float(link_apply(self.links[0], alpha)),) if self.constant_alpha
               else self.rho)
        return np.array(rho + self.beta + self.gamma)

    def names(self):
        p = 1 if self.constant_alpha else len(self.rho)
        return ([f"rho{i}" for i in range(p)] + [f"beta{i}" for i in range(len(self.beta))]
                + [f"gamma{i}" for i in range(len(self.gamma))])


def _design(gens, rng, n):
    return np.column_stack([np.ones(n)] + [g.draw(rng, n) for g in gens])


def simulate_replication(config: ExperimentConfig, n: int, replication: int, alpha=None):
    """(ModelSpec, Dataset) for one replication of one cell."""
    rng = RngStream(config.seed, replication)
    X = _design(config.x_covariates, rng, n)
    Z = _design(config.z_covariates, rng, n)
    if config.constant_alpha:
        V = np.ones((n, 1))
        a = np.full(n, float(alpha))
    else:
        V = _design(config.v_covariates, rng, n)
        a = np.asarray(link_inverse(config.links[0], V @ np.array(config.rho)), float)
    mu = np.asarray(link_inverse(config.links[1], X @ np.array(config.beta)), float)
    phi = np.asarray(link_inverse(config.links[2], Z @ np.array(config.gamma)), float)
    u = rng.uniform(size=n)
    draws = beta_sample(rng, mu * phi, (1.0 - mu) * phi)
    y = np.where(u < a, float(config.c), draws)
    spec = ModelSpec(config.c, V, X, Z, *config.links)
    return spec, Dataset(y, config.c)


def _replicate(task):
    config, n, alpha, r = task
    try:
        spec, data = simulate_replication(config, n, r, alpha)
        fitted = fit(spec, data)
    except FitError as exc:
        return None, ";".join(f"{comp}:{type(e).__name__}" for comp, e in exc.errors.items())
    except InfBetaError as exc:
        return None, type(exc).__name__
    return fitted.theta.flat, None


@dataclass
class CellResult:
    n: int
    alpha: Optional[float]
    names: list
    truth: np.ndarray
    estimates: np.ndarray     # replications x d, NaN rows for failures
    failures: int
    failure_kinds: dict

    @property
    def ok(self) -> np.ndarray:
        return ~np.isnan(self.estimates).any(axis=1)

    @property
    def bias(self) -> np.ndarray:
        return self.estimates[self.ok].mean(axis=0) - self.truth

    @property
    def rmse(self) -> np.ndarray:
        return np.sqrt(((self.estimates[self.ok] - self.truth) ** 2).mean(axis=0))

    def alpha_summary(self, link):
        """(bias, rmse) of h^{-1}(rho0) for constant-alpha cells, else None."""
        if self.alpha is None:
            return None
        a_hat = np.asarray(link_inverse(link, self.estimates[self.ok, 0]), float)
        return float(a_hat.mean() - self.alpha), float(math.sqrt(np.mean((a_hat - self.alpha) ** 2)))


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    cells: list

    def table(self):
        """Header and rows of the bias/RMSE table, one row per estimator."""
        header = ["estimator"]
        for cell in self.cells:
            tag = f"n={cell.n}" + ("" if cell.alpha is None else f",alpha={cell.alpha:g}")
            header += [f"bias[{tag}]", f"rmse[{tag}]"]
        names = self.cells[0].names
        rows = []
        for i, name in enumerate(names):
            row = [name]
            for cell in self.cells:
                row += [float(cell.bias[i]), float(cell.rmse[i])]
            rows.append(row)
        if self.config.constant_alpha:
            row = ["alpha"]
            for cell in self.cells:
                row += list(cell.alpha_summary(self.config.links[0]))
            rows.append(row)
        row = ["failures"]
        for cell in self.cells:
            row += [cell.failures, cell.failures / cell.estimates.shape[0]]
        rows.append(row)
        return header, rows


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    """Run every cell; failed replications are counted, never fatal."""
    workers = config.workers if workers is None else workers
    names = config.names()
    cells = []
    for n, alpha in config.cells():
        tasks = [(config, n, alpha, r) for r in range(config.replications)]
        results = map_tasks(_replicate, tasks, workers)
        est = np.full((config.replications, len(names)), np.nan)
        kinds = {}
        for r, (theta, err) in enumerate(results):
            if theta is None:
                kinds[err] = kinds.get(err, 0) + 1
            else:
                est[r] = theta
        cells.append(CellResult(n, alpha, names, config.true_theta(alpha), est,
                                sum(kinds.values()), dict(sorted(kinds.items()))))
    return ExperimentResult(config, cells)


def first_experiment(replications: int = 500, seed: int = 2010, n: int = 150,
                     alphas: Sequence[float] = (0.18, 0.32, 0.68, 0.82)) -> ExperimentConfig:
    """Constant alpha at four levels, covariates in mu and phi."""
    return ExperimentConfig(beta=(-1.0, 1.0, -0.5, 0.5), gamma=(2.0, 1.0, 0.5, 0.5),
                            sample_sizes=(n,), replications=replications, seed=seed,
                            alphas=tuple(alphas), name="first")


def second_experiment(replications: int = 500, seed: int = 2010,
                      sample_sizes: Sequence[int] = (50, 150, 300)) -> ExperimentConfig:
    """Covariates in all three components."""
    return ExperimentConfig(rho=(-1.0, 1.0, -0.5, 0.5), beta=(-1.0, 1.0, -0.5, 0.5),
                            gamma=(2.0, 1.0, 0.5, 0.5), sample_sizes=tuple(sample_sizes),
                            replications=replications, seed=seed, name="second")


_EXPERIMENT_FIELDS = {"name", "c", "rho", "alphas", "beta", "gamma", "sample_sizes",
                      "replications", "seed", "covariates", "links", "workers"}


def experiment_from_dict(raw) -> ExperimentConfig:
    """Build an ExperimentConfig from its JSON form.

    ``covariates`` maps alpha/mu/phi to generator lists such as
    ``["normal(0,1)", "poisson(1)", "binomial(0.2,5)"]``; ``links`` maps the
    same keys to link names.
    """
    if not isinstance(raw, dict):
        raise ConfigError("experiment config must be a JSON object")
    extra = sorted(set(raw) - _EXPERIMENT_FIELDS)
    if extra:
        raise ConfigError(f"unknown experiment field(s): {', '.join(extra)}")
    for req in ("beta", "gamma", "sample_sizes", "replications", "seed"):
        if req not in raw:
            raise ConfigError(f"experiment config needs {req!r}")
    cov = raw.get("covariates", {})
    links = raw.get("links", {})
    if not isinstance(cov, dict) or not isinstance(links, dict):
        raise ConfigError("covariates and links must be objects keyed by alpha/mu/phi")
    kwargs = {}
    for key, attr in (("alpha", "v_covariates"), ("mu", "x_covariates"), ("phi", "z_covariates")):
        if key in cov:
            kwargs[attr] = tuple(cov[key])
    kwargs["links"] = tuple(links.get(k, d) for k, d in
                            (("alpha", "logit"), ("mu", "logit"), ("phi", "log")))
    try:
        return ExperimentConfig(
            beta=tuple(raw["beta"]), gamma=tuple(raw["gamma"]),
            sample_sizes=tuple(raw["sample_sizes"]), replications=int(raw["replications"]),
            seed=int(raw["seed"]), rho=None if raw.get("rho") is None else tuple(raw["rho"]),
            alphas=tuple(raw.get("alphas", ())), c=int(raw.get("c", 0)),
            name=str(raw.get("name", "experiment")), workers=raw.get("workers"), **kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed experiment config: {exc}") from None


# Covariate laws and coefficients for a synthetic application-shaped data
# set with five regional covariates: (mean, sd) per covariate, clipped to
# the listed range, and the zero-inflated model used to draw the response.
APPLICATION_COVARIATES = {
    "lnpop": (9.4042, 1.3464, 7.0, 17.0),
    "propurb": (0.7173, 0.2044, 0.05, 1.0),
    "propmen": (0.5062, 0.0114, 0.45, 0.56),
    "prop2029": (0.1660, 0.0136, 0.12, 0.22),
    "hdie": (0.8236, 0.0587, 0.55, 0.97),
}
APPLICATION_TERMS = ("lnpop", "prop2029", "hdie")
APPLICATION_THETA = {
    "rho": (27.27, -1.17, -48.06, -11.34),
    "beta": (-4.72, -0.53, 27.68, 3.10),
    "gamma": (9.46, 0.47, -28.34, -6.70),
}


def application_like_data(n: int = 200, seed: int = 1):
    """Columns (dict of arrays) of a synthetic application-shaped data set.

    Covariates are independent clipped normals; ``y`` follows the
    zero-inflated model in APPLICATION_THETA with terms APPLICATION_TERMS
    in all three components.
    """
    rng = RngStream(seed, 0)
    g = rng.generator
    cols = {}
    for name, (mean, sd, lo, hi) in APPLICATION_COVARIATES.items():
        cols[name] = np.clip(g.normal(mean, sd, n), lo, hi)
    D = np.column_stack([np.ones(n)] + [cols[t] for t in APPLICATION_TERMS])
    alpha = np.asarray(link_inverse("logit", D @ np.array(APPLICATION_THETA["rho"])), float)
    mu = np.asarray(link_inverse("logit", D @ np.array(APPLICATION_THETA["beta"])), float)
    phi = np.asarray(link_inverse("log", D @ np.array(APPLICATION_THETA["gamma"])), float)
    u = rng.uniform(size=n)
    draws = beta_sample(rng, mu * phi, (1.0 - mu) * phi)
    cols["y"] = np.where(u < alpha, 0.0, draws)
    return cols
