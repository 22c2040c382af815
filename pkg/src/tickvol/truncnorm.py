"""Normal distributions restricted to (possibly half-infinite) boxes.

Univariate work is vectorized over many means at once, which is what the
particle filter needs: one truncation interval, N different centres.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

MAX_DIM = 4
TAIL_START = 6.0
GIBBS_BURN_IN = 10
GIBBS_SWEEPS = 10
BATCH_POINTS = 256  # lattice size for batched rectangle weights

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class EmptyBoxError(ValueError):
    """Raised when a truncation region has no usable probability mass."""


@dataclass(frozen=True)
class TruncatedNormalSpec:
    """N(mean, cov) restricted to ``lower < x < upper`` (log-price units)."""

    mean: np.ndarray
    cov: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        s = mean.shape[0]
        if cov.shape != (s, s) or lo.shape != (s,) or hi.shape != (s,):
            raise ValueError("inconsistent dimensions")
        if s > MAX_DIM:
            raise ValueError(f"dimension {s} exceeds the supported maximum {MAX_DIM}")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(np.isnan(mean)):
            raise ValueError("NaN in mean or bounds")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=0.0):
            raise ValueError("covariance is not symmetric")
        if np.any(np.diag(cov) <= 0):
            raise ValueError("covariance diagonal must be positive")
        if s > 1 and np.linalg.eigvalsh(cov)[0] <= 0:
            raise ValueError("covariance is not positive definite")
        if np.any(lo >= hi):
            raise EmptyBoxError("degenerate box")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


# -- univariate, standardized -------------------------------------------------

def _to_lower_tail(a, b):
    """Reflect intervals lying above zero so every interval has ``lo <= 0`` or ends below it."""
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    return flip, lo, hi


def _gauss_legendre_mass(lo, hi):
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    z = mid[..., None] + half[..., None] * _GL_NODES
    return half * (np.exp(-0.5 * z * z) @ _GL_WEIGHTS) * _INV_SQRT_2PI


def _narrow(lo, pl, ph):
    # mass below a tenth of the lower-tail CDF: the CDF difference would cancel,
    # and the density is flat enough over the interval for quadrature/uniform proposals
    return np.isfinite(lo) & (ph - pl < 0.1 * ph)


def std_interval_prob(a, b):
    """P(a < Z < b) for standard normal Z, elementwise.

    Intervals are reflected into the lower tail, where ``ndtr`` keeps full
    relative precision; narrow intervals are integrated by Gauss-Legendre
    quadrature to avoid cancellation in the CDF difference.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _, lo, hi = _to_lower_tail(a, b)
    pl = special.ndtr(lo)
    ph = special.ndtr(hi)
    p = ph - pl
    narrow = _narrow(lo, pl, ph)
    if narrow.any():
        p = np.array(p, dtype=float, copy=True)
        p[narrow] = _gauss_legendre_mass(lo[narrow], hi[narrow])
    return p


def std_interval_ppf(a, b, u):
    """Inverse CDF of Z truncated to (a, b) evaluated at ``u`` in [0, 1]."""
    flip, lo, hi = _to_lower_tail(np.asarray(a, float), np.asarray(b, float))
    u = np.where(flip, 1.0 - np.asarray(u, float), u)
    pl = special.ndtr(lo)
    ph = special.ndtr(hi)
    z = special.ndtri(pl + u * (ph - pl))
    z = np.clip(z, lo, hi)
    return np.where(flip, -z, z)


def _uniform_rejection(lo, hi, rng):
    """Exact draws for intervals on which the density is nearly constant."""
    out = np.empty_like(lo)
    todo = np.arange(lo.size)
    zmin2 = np.where((lo < 0) & (hi > 0), 0.0, np.minimum(lo * lo, hi * hi))
    while todo.size:
        z = lo[todo] + (hi[todo] - lo[todo]) * rng.random(todo.size)
        ok = rng.random(todo.size) <= np.exp(0.5 * (zmin2[todo] - z * z))
        out[todo[ok]] = z[ok]
        todo = todo[~ok]
    return out


def _exponential_rejection(a, b, rng):
    """Draws from Z | a < Z < b for a >= TAIL_START via a shifted exponential proposal."""
    out = np.empty_like(a)
    rate = 0.5 * (a + np.sqrt(a * a + 4.0))
    todo = np.arange(a.size)
    while todo.size:
        z = a[todo] + rng.standard_exponential(todo.size) / rate[todo]
        ok = (z < b[todo]) & (rng.random(todo.size) <= np.exp(-0.5 * (z - rate[todo]) ** 2))
        out[todo[ok]] = z[ok]
        todo = todo[~ok]
    return out


def std_truncated_sample_and_prob(a, b, rng: np.random.Generator):
    """Exact draws of Z | a < Z < b together with P(a < Z < b), elementwise.

    Three regimes: inverse CDF in the bulk, uniform rejection on narrow
    intervals, exponential rejection when the whole interval lies more than
    ``TAIL_START`` standard deviations out.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if not np.all(a < b):
        raise EmptyBoxError("empty truncation interval")
    flip, lo, hi = _to_lower_tail(a, b)
    pl = special.ndtr(lo)
    ph = special.ndtr(hi)
    mass = ph - pl
    z = special.ndtri(pl + rng.random(lo.size) * mass)
    narrow = _narrow(lo, pl, ph)
    tail = hi < -TAIL_START
    if narrow.any():
        z[narrow] = _uniform_rejection(lo[narrow], hi[narrow], rng)
        mass[narrow] = _gauss_legendre_mass(lo[narrow], hi[narrow])
        tail &= ~narrow
    if tail.any():
        z[tail] = -_exponential_rejection(-hi[tail], -lo[tail], rng)
    np.clip(z, lo, hi, out=z)
    np.negative(z, out=z, where=flip)
    return z, mass


def std_truncated_sample(a, b, rng: np.random.Generator):
    """One exact draw of Z | a < Z < b per element."""
    return std_truncated_sample_and_prob(a, b, rng)[0]


# -- univariate, general location/scale ---------------------------------------

def interval_prob(mean, sd, lower, upper):
    """P(lower < X < upper) for X ~ N(mean, sd^2), broadcasting over all arguments."""
    mean = np.asarray(mean, dtype=float)
    with np.errstate(invalid="ignore"):
        a = (lower - mean) / sd
        b = (upper - mean) / sd
    return std_interval_prob(a, b)


def _inside(x, lower, upper):
    # rounding in mean + sd*z can land on a bound
    return np.minimum(np.maximum(x, np.nextafter(lower, np.inf)), np.nextafter(upper, -np.inf))


def truncated_normal_and_prob(mean, sd: float, lower: float, upper: float, rng: np.random.Generator):
    """Draws from N(mean_i, sd^2) on (lower, upper) and the untruncated mass of that interval."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    z, mass = std_truncated_sample_and_prob((lower - mean) / sd, (upper - mean) / sd, rng)
    return _inside(mean + sd * z, lower, upper), mass


def truncated_normal(mean, sd, lower, upper, rng: np.random.Generator):
    """Draws from N(mean, sd^2) restricted to (lower, upper), one per element of ``mean``."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    a = np.broadcast_to((lower - mean) / sd, mean.shape)
    b = np.broadcast_to((upper - mean) / sd, mean.shape)
    return _inside(mean + sd * std_truncated_sample(a, b, rng), lower, upper)


# -- multivariate -------------------------------------------------------------

def _richtmyer(n: int, dim: int) -> np.ndarray:
    primes = np.array([2, 3, 5, 7, 11, 13, 17, 19][:dim], dtype=float)
    gen = np.sqrt(primes) % 1.0
    return (np.arange(1, n + 1)[:, None] * gen[None, :]) % 1.0


def _genz_sov(mean, chol, lower, upper, w):
    """Separation-of-variables integrand evaluated on points ``w`` in [0,1)^(S-1)."""
    s = mean.shape[0]
    n = w.shape[0]
    y = np.zeros((n, s))
    f = np.ones(n)
    for i in range(s):
        shift = y[:, :i] @ chol[i, :i] if i else 0.0
        a = (lower[i] - mean[i] - shift) / chol[i, i]
        b = (upper[i] - mean[i] - shift) / chol[i, i]
        a = np.broadcast_to(a, (n,))
        b = np.broadcast_to(b, (n,))
        f = f * std_interval_prob(a, b)
        if i < s - 1:
            y[:, i] = std_interval_ppf(a, b, w[:, i])
    return f


def genz_rect_prob(mean, cov, lower, upper, rel_tol: float = 1e-6, seed: int = 20240601,
                   n_shifts: int = 12, max_points: int = 2 ** 20) -> tuple[float, float]:
    """Rectangle probability of a correlated normal by randomized lattice quadrature.

    Returns ``(estimate, standard_error)``.  The lattice size doubles until the
    relative standard error drops below ``rel_tol`` or ``max_points`` is hit.
    """
    mean = np.asarray(mean, float)
    chol = np.linalg.cholesky(np.asarray(cov, float))
    s = mean.shape[0]
    if s == 1:
        p = float(std_interval_prob((lower[0] - mean[0]) / chol[0, 0], (upper[0] - mean[0]) / chol[0, 0]))
        return p, 0.0
    rng = np.random.default_rng(seed)
    shifts = rng.random((n_shifts, s - 1))
    n = 256
    while True:
        base = _richtmyer(n, s - 1)
        vals = np.array([
            _genz_sov(mean, chol, lower, upper, np.abs(2.0 * ((base + sh) % 1.0) - 1.0)).mean()
            for sh in shifts
        ])
        est = float(vals.mean())
        err = float(vals.std(ddof=1) / np.sqrt(n_shifts))
        if est == 0.0 or err <= rel_tol * est or n * n_shifts >= max_points:
            return est, err
        n *= 2


def rect_prob(spec: TruncatedNormalSpec) -> float:
    """Probability mass of N(mean, cov) inside the box of ``spec``."""
    sd = np.sqrt(np.diag(spec.cov))
    if spec.dim == 1 or np.count_nonzero(spec.cov - np.diag(np.diag(spec.cov))) == 0:
        return float(np.prod(interval_prob(spec.mean, sd, spec.lower, spec.upper)))
    return genz_rect_prob(spec.mean, spec.cov, spec.lower, spec.upper)[0]


def box_prob(means: np.ndarray, cov: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Rectangle probabilities for many means sharing one covariance; ``means`` is (N, S)."""
    means = np.asarray(means, dtype=float)
    cov = np.atleast_2d(cov)
    sd = np.sqrt(np.diag(cov))
    if means.shape[1] == 1 or np.count_nonzero(cov - np.diag(np.diag(cov))) == 0:
        return np.prod(interval_prob(means, sd, lower, upper), axis=1)
    return genz_batch_prob(means, cov, lower, upper)


def genz_batch_prob(means: np.ndarray, cov: np.ndarray, lower, upper, n_points: int = BATCH_POINTS,
                    seed: int = 20240601) -> np.ndarray:
    """Rectangle probabilities for rows of ``means`` on one shared shifted lattice.

    Cheaper and cruder than :func:`genz_rect_prob` (no error control), which
    is fine for importance weights.
    """
    means = np.asarray(means, dtype=float)
    chol = np.linalg.cholesky(np.asarray(cov, float))
    n, s = means.shape
    shift = np.random.default_rng(seed).random(s - 1)
    w = np.abs(2.0 * ((_richtmyer(n_points, s - 1) + shift) % 1.0) - 1.0)
    y = np.zeros((n, n_points, s))
    f = np.ones((n, n_points))
    for i in range(s):
        cond = (y[:, :, :i] @ chol[i, :i]) if i else 0.0
        a = (lower[i] - means[:, i:i + 1] - cond) / chol[i, i]
        b = (upper[i] - means[:, i:i + 1] - cond) / chol[i, i]
        a = np.broadcast_to(a, (n, n_points))
        b = np.broadcast_to(b, (n, n_points))
        f = f * std_interval_prob(a, b)
        if i < s - 1:
            y[:, :, i] = std_interval_ppf(a, b, np.broadcast_to(w[:, i], (n, n_points)))
    return f.mean(axis=1)


def gibbs_box_sample(means: np.ndarray, cov: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                     rng: np.random.Generator, burn_in: int = GIBBS_BURN_IN,
                     sweeps: int = GIBBS_SWEEPS) -> np.ndarray:
    """Coordinate-wise Gibbs draws from N(mean_i, cov) on the box, one chain per row of ``means``."""
    means = np.asarray(means, dtype=float)
    n, s = means.shape
    sd = np.sqrt(np.diag(cov))
    x = np.column_stack([truncated_normal(means[:, k], sd[k], lower[k], upper[k], rng) for k in range(s)])
    prec = np.linalg.inv(cov)
    cond_sd = 1.0 / np.sqrt(np.diag(prec))
    for _ in range(burn_in + sweeps):
        for k in range(s):
            others = [j for j in range(s) if j != k]
            dev = (x[:, others] - means[:, others]) @ prec[k, others]
            cmean = means[:, k] - dev / prec[k, k]
            x[:, k] = truncated_normal(cmean, cond_sd[k], lower[k], upper[k], rng)
    return x


def box_sample(means: np.ndarray, cov: np.ndarray, lower: np.ndarray, upper: np.ndarray,
               rng: np.random.Generator) -> np.ndarray:
    """Draws from N(mean_i, cov) restricted to the box, for every row of ``means``."""
    means = np.asarray(means, dtype=float)
    cov = np.atleast_2d(cov)
    if means.shape[1] == 1 or np.count_nonzero(cov - np.diag(np.diag(cov))) == 0:
        sd = np.sqrt(np.diag(cov))
        return np.column_stack([
            truncated_normal(means[:, k], sd[k], lower[k], upper[k], rng) for k in range(means.shape[1])
        ])
    return gibbs_box_sample(means, cov, lower, upper, rng)


def sample(spec: TruncatedNormalSpec, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Draw from ``spec``; returns an S-vector, or (size, S) when ``size`` is given."""
    m = 1 if size is None else size
    means = np.broadcast_to(spec.mean, (m, spec.dim))
    out = box_sample(means, spec.cov, spec.lower, spec.upper, rng)
    return out[0] if size is None else out
