"""Sequential EM-type volatility recursions driven by filtering particles.

Every filter step yields an update matrix (the particle-weighted outer product
of latent increments).  The estimate is a stochastic-approximation average of
these matrices, either with decaying step ``lambda0 * (j-1)^-gamma`` for a
time-constant volatility or with a fixed step ``lambda`` for a time-varying
one.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from .filter import ParticleCloud
from .model import StateMode

DEFAULT_GAMMA = 0.9
DEFAULT_LAMBDA0 = 1.0


@dataclass(frozen=True)
class ConstantStep:
    """Decaying step ``lambda0 * (j - 1) ** -gamma``."""

    gamma: float = DEFAULT_GAMMA
    lambda0: float = DEFAULT_LAMBDA0

    def __post_init__(self):
        if not 0.5 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (1/2, 1], got {self.gamma}")
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")

    def size(self, j: int) -> float:
        return self.lambda0 * (j - 1) ** -self.gamma


@dataclass(frozen=True)
class FixedStep:
    lam: float

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"fixed step must lie in (0, 1), got {self.lam}")

    def size(self, j: int) -> float:
        return self.lam


StepPolicy = Union[ConstantStep, FixedStep]


@dataclass(frozen=True)
class VolEstimatorState:
    """Current covariance estimate after ``j`` observations.

    ``j = 1`` means nothing has been consumed yet and ``sigma`` is the
    starting value handed to the first filter step.
    """

    sigma: np.ndarray
    policy: StepPolicy
    j: int = 1
    k_lag: int = 1
    mode: StateMode = StateMode.TRANSACTION

    def __post_init__(self):
        object.__setattr__(self, "mode", StateMode(self.mode))

    @classmethod
    def start(cls, sigma0, policy: StepPolicy, k_lag: int = 1,
              mode: StateMode | str = StateMode.TRANSACTION) -> "VolEstimatorState":
        sig = np.atleast_2d(np.asarray(sigma0, dtype=float))
        if sig.shape[0] != sig.shape[1]:
            raise ValueError("sigma must be square")
        if not np.array_equal(sig, sig.T):
            raise ValueError("sigma must be symmetric")
        if np.linalg.eigvalsh(sig)[0] < 0:
            raise ValueError("sigma must be positive semi-definite")
        if k_lag < 1:
            raise ValueError("k_lag must be >= 1")
        return cls(sig, policy, 1, k_lag, StateMode(mode))


def _increments(cloud: ParticleCloud, k_lag: int) -> np.ndarray:
    if k_lag < 1:
        raise ValueError("k_lag must be >= 1")
    if k_lag > cloud.max_lag or cloud.depth < k_lag + 1:
        raise ValueError(f"cloud history too short for lag {k_lag}")
    return cloud.history[0] - cloud.history[k_lag]


def _weighted_outer(d: np.ndarray, w: np.ndarray) -> np.ndarray:
    m = (d * w[:, None]).T @ d
    return 0.5 * (m + m.T)


def breve_sigma(cloud: ParticleCloud, k_lag: int = 1) -> np.ndarray:
    """Per-transaction update matrix ``(1/k) sum_i w_i d_i d_i^T`` with lag-k increments ``d_i``."""
    return _weighted_outer(_increments(cloud, k_lag), cloud.weights) / k_lag


def breve_sigma_clock(cloud: ParticleCloud, k_lag: int, dt_k: float) -> np.ndarray:
    """Per-second update matrix: increments over the last ``k_lag`` ticks divided by their span ``dt_k``."""
    if not dt_k > 0:
        raise ValueError(f"time span must be positive, got {dt_k}")
    return _weighted_outer(_increments(cloud, k_lag), cloud.weights) / dt_k


def _advance(state: VolEstimatorState, breve, lam: float) -> VolEstimatorState:
    b = np.atleast_2d(np.asarray(breve, dtype=float))
    if b.shape != state.sigma.shape:
        raise ValueError("update matrix has the wrong shape")
    sigma = (1.0 - lam) * state.sigma + lam * b
    return VolEstimatorState(sigma, state.policy, state.j + 1, state.k_lag, state.mode)


def update_constant(state: VolEstimatorState, breve) -> VolEstimatorState:
    """Decaying-step update for a time-constant covariance."""
    if not isinstance(state.policy, ConstantStep):
        raise TypeError("update_constant needs a ConstantStep policy")
    j = state.j + 1
    lam = state.policy.size(j)
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"step size {lam} at j={j} outside (0, 1]")
    return _advance(state, breve, lam)


def update_tv(state: VolEstimatorState, breve) -> VolEstimatorState:
    """Fixed-step exponential smoothing update for a time-varying covariance."""
    if not isinstance(state.policy, FixedStep):
        raise TypeError("update_tv needs a FixedStep policy")
    return _advance(state, breve, state.policy.lam)


def update(state: VolEstimatorState, breve) -> VolEstimatorState:
    if isinstance(state.policy, ConstantStep):
        return update_constant(state, breve)
    return update_tv(state, breve)


@dataclass(frozen=True)
class DurationState:
    """Exponentially averaged inter-trade duration; ``1 / dbar`` estimates the trading intensity."""

    lam: float
    dbar: Optional[float] = None
    j: int = 1

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"duration step must lie in (0, 1), got {self.lam}")

    @property
    def intensity(self) -> float:
        if self.dbar is None:
            raise ValueError("no duration observed yet")
        return 1.0 / self.dbar


def update_duration(state: DurationState, dt: float) -> DurationState:
    if not dt > 0:
        raise ValueError(f"duration must be positive, got {dt}")
    if state.dbar is None:
        return replace(state, dbar=float(dt), j=state.j + 1)
    return replace(state, dbar=(1.0 - state.lam) * state.dbar + state.lam * dt, j=state.j + 1)


def alt_clock_estimate(sigma_txn, dbar: float) -> np.ndarray:
    """Clock-time covariance from a per-transaction one: variance per trade times trades per second."""
    if not dbar > 0:
        raise ValueError(f"average duration must be positive, got {dbar}")
    return np.asarray(sigma_txn, dtype=float) / dbar


def cv_criterion(sigma_hats: Sequence, breves: Sequence) -> float:
    """Sum over j of squared entrywise gaps between the estimate at j and the update matrix at j+1.

    ``sigma_hats[i]`` and ``breves[i]`` must refer to the same step.
    """
    s = np.asarray(sigma_hats, dtype=float)
    b = np.asarray(breves, dtype=float)
    if s.shape != b.shape:
        raise ValueError("estimate and update sequences differ in shape")
    return float(np.sum((s[:-1] - b[1:]) ** 2))


def select_grid_min(grid: Sequence[float], crits: Sequence[float]) -> float:
    """Grid value with the smallest criterion; ties go to the smaller value, then the earlier entry."""
    if len(grid) == 0:
        raise ValueError("empty grid")
    order = sorted(range(len(grid)), key=lambda i: (crits[i], grid[i], i))
    return float(grid[order[0]])


def duration_prediction_error(times, lam: float) -> float:
    """Sum over j of (dbar_j - (t_{j+1} - t_j))^2 for the duration recursion with step ``lam``."""
    dt = np.diff(np.asarray(times, dtype=float))
    if dt.size < 2 or np.any(dt <= 0):
        raise ValueError("need at least three strictly increasing times")
    DurationState(lam)  # validates lam
    dbar = np.empty(dt.size - 1)
    d = dt[0]
    for j in range(dt.size - 1):
        if j:
            d = (1.0 - lam) * d + lam * dt[j]
        dbar[j] = d
    return float(np.sum((dbar - dt[1:]) ** 2))


def select_duration_lambda(times, grid: Sequence[float]) -> tuple[float, list[float]]:
    crits = [duration_prediction_error(times, lam) for lam in grid]
    return select_grid_min(grid, crits), crits
