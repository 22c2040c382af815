"""Comparison estimators.

The benchmark smooths squared log-returns and removes twice an on-line
estimate of the additive noise variance, which is identified by the lag-one
return autocovariance (``-eta^2`` under i.i.d. noise).  The oracle smooths
squared increments of the latent log-price and only exists in simulations.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.signal import lfilter

from .seqem import DEFAULT_GAMMA, select_grid_min


@dataclass(frozen=True)
class BenchState:
    sigma: float
    eta2: float
    j: int
    last: float        # log y_j
    before_last: float  # log y_{j-1}
    negative_count: int = 0

    @property
    def correction(self) -> float:
        return max(0.0, 2.0 * self.eta2)


def bench_init(log_y1: float, log_y2: float, sigma0: Optional[float] = None) -> BenchState:
    """State after two prices; the noise variance starts at 0.

    Without ``sigma0`` the estimate starts at the first squared return, which is
    what the decaying-step recursion produces at j = 2.
    """
    r = log_y2 - log_y1
    sigma = r * r if sigma0 is None else float(sigma0)
    return BenchState(sigma=sigma, eta2=0.0, j=2, last=log_y2, before_last=log_y1)


def _bench_step(state: BenchState, log_y: float, lam: float) -> BenchState:
    j = state.j + 1
    if j < 3:
        raise ValueError("benchmark needs two prices before its first update")
    r = log_y - state.last
    r_prev = state.last - state.before_last
    a = 1.0 / (j - 2)
    eta2 = (1.0 - a) * state.eta2 - a * r * r_prev
    corr_new = max(0.0, 2.0 * eta2)
    sigma = (1.0 - lam) * (state.sigma + state.correction) + lam * r * r - corr_new
    neg = state.negative_count + (sigma < 0)
    return BenchState(sigma, eta2, j, log_y, state.last, neg)


def bench_update_const(state: BenchState, log_y: float) -> BenchState:
    """Running-mean benchmark (step ``1/(j-1)``)."""
    return _bench_step(state, log_y, 1.0 / state.j)


def bench_update_tv(state: BenchState, log_y: float, lam: float) -> BenchState:
    """Fixed-step benchmark; the noise variance keeps its running-mean step."""
    if not 0.0 < lam < 1.0:
        raise ValueError(f"step must lie in (0, 1), got {lam}")
    return _bench_step(state, log_y, lam)


def noise_variance_path(log_prices) -> np.ndarray:
    """eta2_j for j = 2..T (index 0 is j = 2, where it is 0)."""
    ly = np.asarray(log_prices, dtype=float)
    r = np.diff(ly)
    prod = r[1:] * r[:-1]  # r_j * r_{j-1} for j = 3..T
    k = np.arange(1, prod.size + 1)
    # eta2_j is minus the running mean of those products
    return np.concatenate([[0.0], -np.cumsum(prod) / k])


def bench_tv_path(log_prices, lam: float, sigma0: Optional[float] = None) -> np.ndarray:
    """Fixed-step benchmark estimates for j = 2..T in one vectorized pass."""
    ly = np.asarray(log_prices, dtype=float)
    r2 = np.diff(ly) ** 2
    corr = np.maximum(0.0, 2.0 * noise_variance_path(ly))
    v0 = (r2[0] if sigma0 is None else sigma0) + corr[0]
    # V_j = sigma_j + corr_j follows a plain exponential smoother of r_j^2
    v, _ = lfilter([lam], [1.0, -(1.0 - lam)], r2[1:], zi=[(1.0 - lam) * v0])
    return np.concatenate([[v0], v]) - corr


def bench_cv(log_prices, grid: Sequence[float], sigma0: Optional[float] = None) -> tuple[float, list[float]]:
    """Step size minimizing the squared gap between the noise-inflated estimate and a future squared return."""
    ly = np.asarray(log_prices, dtype=float)
    if ly.size < 100:
        raise ValueError("need at least 100 prices")
    if len(grid) == 0:
        raise ValueError("empty grid")
    r2 = np.diff(ly) ** 2
    corr = np.maximum(0.0, 2.0 * noise_variance_path(ly))
    crits = []
    for lam in grid:
        v = bench_tv_path(ly, lam, sigma0) + corr  # j = 2..T
        # pair j with the return from j+1 to j+2 (r2 index j)
        target = r2[2:]
        crits.append(float(np.sum((v[: target.size] - target) ** 2)))
    return select_grid_min(grid, crits), crits


@dataclass(frozen=True)
class OracleState:
    sigma: float = 0.0
    j: int = 1
    gamma: float = DEFAULT_GAMMA


def oracle_update(state: OracleState, x: float, x_prev: float) -> OracleState:
    """Decaying-step average of squared latent increments."""
    j = state.j + 1
    lam = (j - 1) ** -state.gamma
    return replace(state, sigma=(1.0 - lam) * state.sigma + lam * (x - x_prev) ** 2, j=j)


def oracle_path(x, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Oracle estimates for j = 2..T."""
    inc2 = np.diff(np.asarray(x, dtype=float)) ** 2
    out = np.empty_like(inc2)
    s = 0.0
    for i, d in enumerate(inc2):
        lam = (i + 1) ** -gamma
        s = (1.0 - lam) * s + lam * d
        out[i] = s
    return out
