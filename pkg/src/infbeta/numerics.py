"""Special functions, beta sampling and the weighted least-squares kernel.

All special functions accept scalars or numpy arrays and return the same
shape. They are written with plain numpy so they can be used on whole
observation vectors inside the fitting loops.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CollinearityError, DomainError

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_SHIFT = 10.0

# Stirling series coefficients B_{2j} / (2j (2j-1)) for j = 1..6
_STIRLING = (1.0 / 12.0, -1.0 / 360.0, 1.0 / 1260.0, -1.0 / 1680.0,
             1.0 / 1188.0, -691.0 / 360360.0)
# asymptotic digamma: B_{2j} / (2j) for j = 1..7
_DIGAMMA_ASY = (1.0 / 12.0, -1.0 / 120.0, 1.0 / 252.0, -1.0 / 240.0,
                5.0 / 660.0, -691.0 / 32760.0, 1.0 / 12.0)
# asymptotic trigamma: B_{2j} for j = 1..7
_TRIGAMMA_ASY = (1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0,
                 5.0 / 66.0, -691.0 / 2730.0, 7.0 / 6.0)


def _as_positive(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} must be finite and > 0")
    return arr


def _unwrap(arr):
    return float(arr) if arr.ndim == 0 else arr


def log_gamma(x):
    """Natural log of the gamma function for x > 0."""
    x = _as_positive(x)
    z = np.array(x, dtype=float, copy=True)
    corr = np.zeros_like(z)
    small = z < _SHIFT
    while np.any(small):
        corr[small] += np.log(z[small])
        z[small] += 1.0
        small = z < _SHIFT
    inv = 1.0 / z
    inv2 = inv * inv
    series = np.zeros_like(z)
    for coef in reversed(_STIRLING):
        series = series * inv2 + coef
    out = (z - 0.5) * np.log(z) - z + _HALF_LOG_2PI + series * inv - corr
    return _unwrap(out)


def digamma(x):
    """psi(x) = d/dx log Gamma(x), by upward recurrence and asymptotic series."""
    x = _as_positive(x)
    z = np.array(x, dtype=float, copy=True)
    acc = np.zeros_like(z)
    small = z < _SHIFT
    while np.any(small):
        acc[small] -= 1.0 / z[small]
        z[small] += 1.0
        small = z < _SHIFT
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for coef in reversed(_DIGAMMA_ASY):
        series = series * inv2 + coef
    out = np.log(z) - 0.5 / z - series * inv2 + acc
    return _unwrap(out)


def trigamma(x):
    """psi'(x), the derivative of the digamma function."""
    x = _as_positive(x)
    z = np.array(x, dtype=float, copy=True)
    acc = np.zeros_like(z)
    small = z < _SHIFT
    while np.any(small):
        acc[small] += 1.0 / (z[small] * z[small])
        z[small] += 1.0
        small = z < _SHIFT
    inv = 1.0 / z
    inv2 = inv * inv
    series = np.zeros_like(z)
    for coef in reversed(_TRIGAMMA_ASY):
        series = series * inv2 + coef
    out = inv + 0.5 * inv2 + series * inv2 * inv + acc
    return _unwrap(out)


def log_beta_function(a, b):
    return log_gamma(a) + log_gamma(b) - log_gamma(np.asarray(a) + np.asarray(b))


def _beta_cf(a, b, x, max_iter=5000, eps=1e-16):
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < tiny, tiny, d)
    d = 1.0 / d
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d_new = 1.0 + aa * d
        d_new = np.where(np.abs(d_new) < tiny, tiny, d_new)
        c_new = 1.0 + aa / c
        c_new = np.where(np.abs(c_new) < tiny, tiny, c_new)
        d_new = 1.0 / d_new
        h_new = h * d_new * c_new
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d_new2 = 1.0 + aa * d_new
        d_new2 = np.where(np.abs(d_new2) < tiny, tiny, d_new2)
        c_new2 = 1.0 + aa / c_new
        c_new2 = np.where(np.abs(c_new2) < tiny, tiny, c_new2)
        d_new2 = 1.0 / d_new2
        delta = d_new2 * c_new2
        h_new = h_new * delta
        d = np.where(active, d_new2, d)
        c = np.where(active, c_new2, c)
        h = np.where(active, h_new, h)
        active &= np.abs(delta - 1.0) > eps
        if not np.any(active):
            break
    return h


def regularized_incomplete_beta(y, a, b):
    """I_y(a, b), the beta distribution function with shapes a, b."""
    y, a, b = np.broadcast_arrays(np.asarray(y, dtype=float),
                                  np.asarray(a, dtype=float),
                                  np.asarray(b, dtype=float))
    if np.any(~np.isfinite(y)) or np.any((y < 0) | (y > 1)):
        raise DomainError("y must lie in [0, 1]")
    _as_positive(a, "a")
    _as_positive(b, "b")
    out = np.zeros(y.shape, dtype=float)
    out[y >= 1.0] = 1.0
    inner = (y > 0.0) & (y < 1.0)
    if np.any(inner):
        yi, ai, bi = y[inner], a[inner], b[inner]
        log_front = (ai * np.log(yi) + bi * np.log1p(-yi)
                     - log_beta_function(ai, bi))
        front = np.exp(log_front)
        swap = yi > ai / (ai + bi)
        res = np.empty_like(yi)
        keep = ~swap
        if np.any(keep):
            res[keep] = front[keep] * _beta_cf(ai[keep], bi[keep], yi[keep]) / ai[keep]
        if np.any(swap):
            res[swap] = 1.0 - front[swap] * _beta_cf(bi[swap], ai[swap],
                                                     1.0 - yi[swap]) / bi[swap]
        out[inner] = np.clip(res, 0.0, 1.0)
    return _unwrap(out)


@dataclass
class RngStream:
    """Reproducible, splittable random stream.

    Streams with the same ``(seed, stream_id)`` produce identical draws;
    different ``stream_id`` values are spawned children of one seed
    sequence, so they are independent.
    """

    seed: int
    stream_id: int = 0
    path: tuple = ()
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0 or any(i < 0 for i in self.path):
            raise DomainError("seed and stream ids must be unsigned")
        key = (int(self.stream_id),) + tuple(int(i) for i in self.path)
        ss = np.random.SeedSequence(int(self.seed), spawn_key=key)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, stream_id: int) -> "RngStream":
        """A stream keyed by ``stream_id`` under the same seed."""
        return RngStream(self.seed, stream_id)

    def spawn(self, index: int) -> "RngStream":
        """A sub-stream nested under this one; never collides with ``child``."""
        return RngStream(self.seed, self.stream_id, self.path + (int(index),))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)


def _log_gamma_variates(rng: RngStream, shape: np.ndarray) -> np.ndarray:
    """Log of Gamma(shape, 1) draws via Marsaglia-Tsang.

    Shapes below one use the boost G(a) = G(a + 1) * U**(1/a), carried out
    in the log domain so that tiny shapes do not underflow.
    """
    gen = rng.generator
    shape = np.asarray(shape, dtype=float)
    boosted = shape < 1.0
    a = np.where(boosted, shape + 1.0, shape)
    d = a - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty(shape.shape, dtype=float)
    pending = np.ones(shape.shape, dtype=bool)
    while np.any(pending):
        idx = np.flatnonzero(pending)
        x = gen.standard_normal(idx.size)
        v = 1.0 + c.flat[idx] * x
        u = gen.uniform(size=idx.size)
        ok = v > 0
        v3 = np.where(ok, v * v * v, 1.0)
        x2 = x * x
        squeeze = u < 1.0 - 0.0331 * x2 * x2
        with np.errstate(divide="ignore", invalid="ignore"):
            full = np.log(u) < 0.5 * x2 + d.flat[idx] * (1.0 - v3 + np.log(v3))
        accept = ok & (squeeze | full)
        hit = idx[accept]
        out.flat[hit] = np.log(d.flat[hit]) + np.log(v3[accept])
        pending.flat[hit] = False
    if np.any(boosted):
        nb = int(np.count_nonzero(boosted))
        u = gen.uniform(size=nb)
        out[boosted] += np.log(u) / shape[boosted]
    return out


def beta_sample(rng: RngStream, a, b, size=None):
    """Draw from Beta(a, b) as a ratio of gamma variates.

    Draws are kept inside the open unit interval at a machine-epsilon margin.
    """
    a = _as_positive(a, "a")
    b = _as_positive(b, "b")
    if size is not None:
        a = np.broadcast_to(a, size)
        b = np.broadcast_to(b, size)
    a, b = np.broadcast_arrays(a, b)
    la = _log_gamma_variates(rng, a)
    lb = _log_gamma_variates(rng, b)
    # x / (x + y) = 1 / (1 + exp(log y - log x))
    with np.errstate(over="ignore"):
        draw = 1.0 / (1.0 + np.exp(lb - la))
    eps = np.finfo(float).eps
    draw = np.clip(draw, eps, 1.0 - eps)
    return _unwrap(draw)


RCOND_MIN = 1e-12


def solve_weighted_least_squares(design, weights, response, block="design"):
    """Solve min (r - D b)' W (r - D b) via QR on W^{1/2} D.

    ``weights`` is either a vector (diagonal W) or a dense symmetric PSD
    matrix. Raises CollinearityError when the whitened design has a
    reciprocal condition number below ``RCOND_MIN``.
    """
    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float)
    if design.ndim == 1:
        design = design[:, None]
    weights = np.asarray(weights, dtype=float)
    if weights.ndim == 1:
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise CollinearityError(block, "weights must be finite and non-negative")
        root = np.sqrt(weights)
        wd = design * root[:, None]
        wr = response * root
    else:
        evals, evecs = np.linalg.eigh(0.5 * (weights + weights.T))
        if evals.min() < -1e-10 * max(1.0, evals.max()):
            raise CollinearityError(block, "weight matrix is not positive semidefinite")
        root = (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T
        wd = root @ design
        wr = root @ response
    return _qr_solve(wd, wr, block)


def _qr_solve(wd, wr, block):
    if wd.shape[0] < wd.shape[1]:
        raise CollinearityError(block, "fewer rows than columns")
    if not (np.all(np.isfinite(wd)) and np.all(np.isfinite(wr))):
        raise CollinearityError(block, "non-finite weighted system")
    q, r = np.linalg.qr(wd)
    sv = np.linalg.svd(r, compute_uv=False)
    if not np.all(np.isfinite(sv)) or sv[-1] <= RCOND_MIN * sv[0]:
        raise CollinearityError(block, "normal matrix is singular or ill-conditioned")
    return np.linalg.solve(r, q.T @ wr)


def whitened_solve(wd, wr, block="design"):
    """Least squares on an already whitened system (rows pre-multiplied by W^{1/2})."""
    return _qr_solve(np.asarray(wd, float), np.asarray(wr, float), block)
