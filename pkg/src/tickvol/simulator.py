"""Synthetic efficient prices, trading times and noisy ticks, plus return statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import StateMode
from .streams import substream

SESSION_OPEN = 9.5 * 3600.0


# -- volatility curves ---------------------------------------------------------
# Curves are evaluated at a position s: the transaction index in transaction
# mode, seconds since the first trade in clock mode.

@dataclass(frozen=True)
class ConstantVol:
    sigma2: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("variance must be positive")

    def __call__(self, s):
        return np.full(np.shape(s), self.sigma2, dtype=float)


@dataclass(frozen=True)
class PiecewiseLinearVol:
    knots: tuple  # ((s0, v0), (s1, v1), ...), s strictly increasing; flat beyond the ends

    def __post_init__(self):
        s = np.array([k[0] for k in self.knots], dtype=float)
        v = np.array([k[1] for k in self.knots], dtype=float)
        if s.size < 1 or np.any(np.diff(s) <= 0) or np.any(v <= 0):
            raise ValueError("knots need increasing positions and positive values")

    def __call__(self, s):
        xs = [k[0] for k in self.knots]
        vs = [k[1] for k in self.knots]
        return np.interp(s, xs, vs)


@dataclass(frozen=True)
class StepVol:
    """``before`` up to position ``at``, ``after`` from there on."""

    before: float
    after: float
    at: float

    def __post_init__(self):
        if not (self.before > 0 and self.after > 0):
            raise ValueError("variances must be positive")

    def __call__(self, s):
        return np.where(np.asarray(s) < self.at, self.before, self.after).astype(float)


@dataclass(frozen=True)
class SinusoidVol:
    """``base + amplitude * sin(2 pi s / period)``; a stand-in for a fast-moving curve."""

    base: float
    amplitude: float
    period: float

    def __post_init__(self):
        if not (self.base > abs(self.amplitude) and self.period > 0):
            raise ValueError("need base > |amplitude| and a positive period")

    def __call__(self, s):
        return self.base + self.amplitude * np.sin(2.0 * np.pi * np.asarray(s, dtype=float) / self.period)


@dataclass(frozen=True)
class UShapeVol:
    """Intraday U: high at the open, ``mid`` halfway through ``length``, rising to ``close``."""

    open: float
    mid: float
    close: float
    length: float

    def __post_init__(self):
        if min(self.open, self.mid, self.close) <= 0 or self.length <= 0:
            raise ValueError("levels and length must be positive")

    def __call__(self, s):
        u = np.clip(np.asarray(s, dtype=float) / self.length, 0.0, 1.0)
        left = self.mid + (self.open - self.mid) * (1.0 - 2.0 * u) ** 2
        right = self.mid + (self.close - self.mid) * (2.0 * u - 1.0) ** 2
        return np.where(u < 0.5, left, right)


# -- arrivals ------------------------------------------------------------------

@dataclass(frozen=True)
class Equispaced:
    dt: float = 1.0

    def times(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        return self.dt * np.arange(n, dtype=float)


@dataclass(frozen=True)
class Poisson:
    rate: float

    def times(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        gaps = rng.exponential(1.0 / self.rate, size=n - 1)
        return np.concatenate([[0.0], np.cumsum(gaps)])


@dataclass(frozen=True)
class InhomPoisson:
    """Thinning of a rate-``rate_max`` Poisson stream by ``rate(t) / rate_max``."""

    rate: object
    rate_max: float

    def times(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if not self.rate_max > 0:
            raise ValueError("rate_max must be positive")
        out = [0.0]
        t = 0.0
        while len(out) < n:
            t += rng.exponential(1.0 / self.rate_max)
            r = float(self.rate(t))
            if r > self.rate_max * (1 + 1e-12) or r <= 0:
                raise ValueError(f"rate {r} at t={t} outside (0, rate_max]")
            if rng.random() * self.rate_max <= r:
                out.append(t)
        return np.array(out)


def parse_arrivals(text: str):
    """``equi:DT``, ``poisson:RATE`` (per second)."""
    kind, _, arg = text.partition(":")
    if kind in ("equi", "equispaced"):
        return Equispaced(float(arg or 1.0))
    if kind == "poisson":
        return Poisson(float(arg))
    raise ValueError(f"unknown arrival model {text!r}")


# -- paths ---------------------------------------------------------------------

@dataclass
class LatentPath:
    times: np.ndarray
    x: np.ndarray
    sigma2: np.ndarray  # variance of the step into each point (per trade or per second); sigma2[0] unused


def gen_path(n: int, vol, p0: float = 50.0, tick_size: float = 0.01, arrivals=None,
             mode: StateMode | str = StateMode.TRANSACTION, seed: int = 0,
             t0: float = SESSION_OPEN) -> LatentPath:
    """Gaussian random walk for the efficient log-price at ``n`` trading times.

    ``exp(x_1)`` is uniform on ``[p0 - tick/2, p0 + tick/2)``.
    """
    if n < 2:
        raise ValueError("need at least two points")
    mode = StateMode(mode)
    rng = substream(seed, "simulate")
    arrivals = Equispaced(1.0) if arrivals is None else arrivals
    rel = arrivals.times(n, rng)
    if mode is StateMode.TRANSACTION:
        var = vol(np.arange(n, dtype=float))
        step_var = var[1:]
    else:
        var = vol(rel)
        step_var = np.diff(rel) * var[1:]
    if np.any(var <= 0) or not np.all(np.isfinite(var)):
        raise ValueError("volatility curve must be positive and finite")
    x0 = math.log(rng.uniform(p0 - 0.5 * tick_size, p0 + 0.5 * tick_size))
    inc = rng.standard_normal(n - 1) * np.sqrt(step_var)
    x = x0 + np.concatenate([[0.0], np.cumsum(inc)])
    return LatentPath(times=t0 + rel, x=x, sigma2=var)


# -- noise ---------------------------------------------------------------------

@dataclass
class NoisyTicks:
    times: np.ndarray
    prices: np.ndarray
    bids: Optional[np.ndarray] = None
    asks: Optional[np.ndarray] = None
    books: Optional[list] = field(default=None, repr=False)


def _grid_round(p, tick):
    return np.round(np.round(p / tick) * tick, 10)


def apply_noise(path: LatentPath, kind: str = "deterministic", tick_size: float = 0.01,
                seed: int = 0, book_depth: int = 5) -> NoisyTicks:
    """Observed trade prices from latent prices under one of the rounding models.

    ``order_book`` draws each trade from a synthetic cent-grid book of
    ``book_depth`` levels on either side of the previous trade; prices beyond
    the book execute at its outermost level.  ``market_maker`` quotes the two
    grid points around the efficient price and trades at the nearer one.
    ``spread_estimate`` is an estimation-side model and simulates as
    deterministic rounding.
    """
    p = np.exp(path.x)
    if kind in ("deterministic", "spread_estimate"):
        return NoisyTicks(path.times.copy(), _grid_round(p, tick_size))
    if kind == "stochastic":
        rng = substream(seed, "noise")
        lo = np.floor(p / tick_size)
        up = rng.random(p.size) < 0.5
        return NoisyTicks(path.times.copy(), np.round((lo + up) * tick_size, 10))
    if kind == "market_maker":
        lo = np.floor(p / tick_size)
        bids = np.round(lo * tick_size, 10)
        asks = np.round((lo + 1) * tick_size, 10)
        prices = np.where(p - bids < asks - p, bids, asks)
        return NoisyTicks(path.times.copy(), prices, bids, asks)
    if kind == "order_book":
        prices = np.empty_like(p)
        books = []
        offsets = np.arange(-book_depth, book_depth + 1) * tick_size
        centre = _grid_round(p[0], tick_size)
        for j, pj in enumerate(p):
            levels = np.round(centre + offsets, 10)
            prices[j] = levels[np.argmin(np.abs(levels - pj))]
            books.append(tuple(levels))
            centre = prices[j]
        return NoisyTicks(path.times.copy(), prices, books=books)
    raise ValueError(f"unknown noise model {kind!r}")


# -- stylized facts ------------------------------------------------------------

class ConstantSeriesError(ValueError):
    """Returns have zero variance; autocorrelations are undefined."""


def log_returns(prices) -> np.ndarray:
    return np.diff(np.log(np.asarray(prices, dtype=float)))


def _acf_of(r: np.ndarray, max_lag: int) -> np.ndarray:
    d = r - r.mean()
    c0 = np.dot(d, d)
    if c0 == 0:
        raise ConstantSeriesError("constant return series")
    n = d.size
    return np.array([np.dot(d[: n - k], d[k:]) / c0 for k in range(1, max_lag + 1)])


def return_acf(prices, max_lag: int) -> np.ndarray:
    """Sample autocorrelations of log-returns at lags 1..max_lag."""
    prices = np.asarray(prices, dtype=float)
    if prices.size < max_lag + 2:
        raise ValueError("series too short for the requested lag")
    return _acf_of(log_returns(prices), max_lag)


def durbin_levinson(acf: np.ndarray) -> np.ndarray:
    """Partial autocorrelations from autocorrelations at lags 1..m."""
    m = acf.size
    rho = np.concatenate([[1.0], acf])
    pacf = np.empty(m)
    phi = np.zeros(m + 1)
    v = 1.0
    for k in range(1, m + 1):
        a = (rho[k] - np.dot(phi[1:k], rho[k - 1:0:-1])) / v
        new = phi.copy()
        new[k] = a
        new[1:k] = phi[1:k] - a * phi[k - 1:0:-1]
        phi = new
        v *= 1.0 - a * a
        pacf[k - 1] = a
    return pacf


def return_pacf(prices, max_lag: int) -> np.ndarray:
    return durbin_levinson(return_acf(prices, max_lag))


def zero_return_fraction(prices) -> float:
    r = np.diff(np.asarray(prices, dtype=float))
    if r.size == 0:
        raise ValueError("need at least two prices")
    return float(np.mean(r == 0.0))
