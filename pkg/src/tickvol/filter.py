"""Optimal-proposal particle filter for rounded observations of a Gaussian random walk.

With an indicator likelihood ``1{exp(x_j) in A_j}`` and a Gaussian transition,
the optimal proposal is the transition density truncated to ``log A_j`` and the
incremental weight is the transition mass of ``log A_j``.  Both are computed
in one pass by :mod:`tickvol.truncnorm`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import StateMode, SupportBox, transition_variance
from .streams import substream
from .truncnorm import box_prob, box_sample, truncated_normal_and_prob

UNDERFLOW = 1e-300
DEFAULT_ESS_FRACTION = 0.2
INIT_CLIP_TICKS = 10


@dataclass
class ParticleCloud:
    """Weighted particles with a short history of past states.

    ``history[0]`` holds the current states, ``history[k]`` the states k steps
    back; shape is ``(k_lag + 1, N, S)``.  ``depth`` counts how many of those
    rows are real (the rest are copies of the initial draw).
    """

    history: np.ndarray
    weights: np.ndarray
    rng: np.random.Generator
    resample_rng: np.random.Generator
    ess_fraction: float = DEFAULT_ESS_FRACTION
    clip_width: float = INIT_CLIP_TICKS * 0.01
    depth: int = 1
    steps: int = 0
    resample_count: int = 0
    divergence_count: int = 0

    def __post_init__(self):
        if self.history.ndim != 3:
            raise ValueError("history must be (k_lag + 1, N, S)")
        if self.n_particles < 2:
            raise ValueError("need at least two particles")
        if not 0 < self.ess_fraction <= 1:
            raise ValueError("ESS fraction must lie in (0, 1]")

    @property
    def n_particles(self) -> int:
        return self.history.shape[1]

    @property
    def dim(self) -> int:
        return self.history.shape[2]

    @property
    def max_lag(self) -> int:
        return self.history.shape[0] - 1

    @property
    def x(self) -> np.ndarray:
        return self.history[0]

    def ess(self) -> float:
        return ess(self.weights)

    def weighted_mean(self) -> np.ndarray:
        return self.weights @ self.history[0]


@dataclass
class FilterStepOutput:
    cloud: ParticleCloud
    likelihood: float
    ess: float
    resampled: bool
    diverged: bool
    masses: Optional[np.ndarray] = field(default=None, repr=False)


def ess(weights) -> float:
    """Effective sample size ``1 / sum(w^2)`` of normalized weights."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.dot(w, w))


def bounded_box(box: SupportBox, anchor=None, clip_width: float = INIT_CLIP_TICKS * 0.01) -> SupportBox:
    """Replace infinite sides of ``box`` by ``anchor -/+ clip_width`` (price units)."""
    if box.bounded:
        return box
    if anchor is None:
        finite = np.where(np.isfinite(box.upper), box.upper, box.lower)
        anchor = finite
    anchor = np.broadcast_to(np.asarray(anchor, dtype=float), box.lower.shape)
    lower = np.where(box.lower > 0, box.lower, np.maximum(anchor - clip_width, 0.0))
    upper = np.where(np.isfinite(box.upper), box.upper, anchor + clip_width)
    lower = np.minimum(lower, np.nextafter(upper, 0))
    return SupportBox(lower, upper, box.lower_closed)


def _uniform_log_draws(box: SupportBox, n: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.uniform(box.lower, box.upper, size=(n, box.dim))
    u = np.clip(u, box.lower, np.nextafter(box.upper, 0))
    return np.log(np.maximum(u, np.nextafter(box.lower, np.inf)))


def init_cloud(first_box: SupportBox, n_particles: int, seed: int, k_lag: int = 1,
               ess_fraction: float = DEFAULT_ESS_FRACTION, anchor=None,
               tick_size: float = 0.01) -> ParticleCloud:
    """Particles whose prices are i.i.d. uniform on the first support box.

    Unbounded boxes (extreme order-book cells) are clipped to
    ``anchor -/+ INIT_CLIP_TICKS * tick_size`` first.
    """
    if n_particles < 2:
        raise ValueError("need at least two particles")
    if k_lag < 1:
        raise ValueError("k_lag must be >= 1")
    clip_width = INIT_CLIP_TICKS * tick_size
    box = bounded_box(first_box, anchor, clip_width)
    rng = substream(seed, "filter")
    x = _uniform_log_draws(box, n_particles, rng)
    history = np.repeat(x[None], k_lag + 1, axis=0)
    return ParticleCloud(
        history=history,
        weights=np.full(n_particles, 1.0 / n_particles),
        rng=rng,
        resample_rng=substream(seed, "resample"),
        ess_fraction=ess_fraction,
        clip_width=clip_width,
    )


def residual_resample_counts(weights, rng: np.random.Generator) -> np.ndarray:
    """Offspring counts: ``floor(N w_i)`` copies plus multinomial draws on the residuals."""
    w = np.asarray(weights, dtype=float)
    n = w.size
    nw = n * w
    counts = np.floor(nw).astype(np.int64)
    rest = n - int(counts.sum())
    if rest > 0:
        resid = nw - counts
        resid /= resid.sum()
        counts += rng.multinomial(rest, resid)
    return counts


def residual_resample(cloud: ParticleCloud, rng: Optional[np.random.Generator] = None) -> ParticleCloud:
    """Residual resampling in place; histories travel with their particles."""
    rng = cloud.resample_rng if rng is None else rng
    counts = residual_resample_counts(cloud.weights, rng)
    idx = np.repeat(np.arange(cloud.n_particles), counts)
    cloud.history = cloud.history[:, idx, :]
    cloud.weights = np.full(cloud.n_particles, 1.0 / cloud.n_particles)
    cloud.resample_count += 1
    return cloud


def step(cloud: ParticleCloud, sigma_pf, box: SupportBox, dt: Optional[float] = None,
         mode: StateMode | str = StateMode.TRANSACTION, anchor=None) -> FilterStepOutput:
    """Advance the cloud by one observation (in place).

    Each particle moves by the transition law truncated to ``log box`` and is
    reweighted by the transition mass of that box.  Resampling happens when the
    ESS falls below ``ess_fraction * N``.  If every weight underflows, the
    cloud is reset to uniform draws on the box and ``diverged`` is set.
    """
    cov = transition_variance(mode, sigma_pf, dt)
    if cov.shape != (cloud.dim, cloud.dim) or box.dim != cloud.dim:
        raise ValueError("dimension mismatch between cloud, covariance and box")
    lo, hi = box.log_bounds()
    prev = cloud.history[0]
    if cloud.dim == 1:
        x, mass = truncated_normal_and_prob(prev[:, 0], np.sqrt(cov[0, 0]), lo[0], hi[0], cloud.rng)
        x = x[:, None]
    else:
        mass = box_prob(prev, cov, lo, hi)
        x = box_sample(prev, cov, lo, hi, cloud.rng)

    unnorm = cloud.weights * mass
    total = float(unnorm.sum())
    diverged = not total >= UNDERFLOW
    if diverged:
        if anchor is None:
            anchor = np.exp(cloud.weighted_mean())
        x = _uniform_log_draws(bounded_box(box, anchor, cloud.clip_width), cloud.n_particles, cloud.rng)
        weights = np.full(cloud.n_particles, 1.0 / cloud.n_particles)
        cloud.divergence_count += 1
    else:
        weights = unnorm / total

    hist = cloud.history
    hist[1:] = hist[:-1]
    hist[0] = x
    cloud.weights = weights
    cloud.depth = min(cloud.depth + 1, hist.shape[0])
    cloud.steps += 1

    cur_ess = ess(weights)
    resampled = cur_ess < cloud.ess_fraction * cloud.n_particles
    if resampled:
        residual_resample(cloud)
    return FilterStepOutput(cloud, total, cur_ess, resampled, diverged, mass)
