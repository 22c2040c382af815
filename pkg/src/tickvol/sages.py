"""Spatially aggregated exponential smoothing (SAGES) over K fixed-step estimators.

Estimators are ordered from the fastest (largest step) to the slowest.  The
aggregate starts at the fastest one and, moving to slower ones, interpolates
harmonically towards each as long as it does not disagree significantly with
the aggregate so far.  Disagreement is a Kullback-Leibler type divergence
scaled by ``kappa * lambda``; the critical values ``kappa`` are calibrated by
simulation under a constant-volatility null.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .filter import init_cloud, step
from .model import support_simple_deterministic
from .seqem import FixedStep, VolEstimatorState, breve_sigma, update_tv
from .simulator import ConstantVol, apply_noise, gen_path

KNEE = 1.0 / 6.0
DEFAULT_ALPHA = 0.25


def kernel_K(u: float) -> float:
    """Plateau kernel: 1 up to 1/6, then linear down to 0 at 7/6."""
    if u < 0:
        raise ValueError("kernel argument must be nonnegative")
    return min(1.0, max(0.0, 1.0 - max(u - KNEE, 0.0)))


def kernel_div(s2: float, s2_ref: float) -> float:
    """``-0.5 * (log r + 1 - r)`` with ``r = s2 / s2_ref``; zero iff the arguments agree."""
    if not (s2 > 0 and s2_ref > 0):
        raise ValueError("variances must be positive")
    r = s2 / s2_ref
    return -0.5 * (math.log(r) + 1.0 - r)


def transaction_grid(k: int = 15, fast: float = 0.05, slow: float = 0.00005) -> np.ndarray:
    """Equally spaced steps from ``fast`` down to ``slow``."""
    return np.linspace(fast, slow, k)


def clock_grid(k: int = 15) -> np.ndarray:
    return np.linspace(0.3, 0.003, k)


def _check_grid(lambdas) -> np.ndarray:
    lam = np.asarray(lambdas, dtype=float)
    if lam.ndim != 1 or lam.size < 2:
        raise ValueError("need at least two step sizes")
    if np.any(np.diff(lam) >= 0):
        raise ValueError("step sizes must be strictly decreasing")
    if np.any(lam <= 0) or np.any(lam >= 1):
        raise ValueError("step sizes must lie in (0, 1)")
    return lam


def sages_combine(estimates: Sequence[float], lambdas: Sequence[float],
                  kappas: Sequence[float]) -> tuple[float, np.ndarray]:
    """Aggregate of K positive estimates; returns the value and the K-1 interpolation weights."""
    est = np.asarray(estimates, dtype=float)
    lam = np.asarray(lambdas, dtype=float)
    kap = np.asarray(kappas, dtype=float)
    if est.size != lam.size or kap.size != est.size - 1:
        raise ValueError("need K estimates, K steps and K-1 critical values")
    agg = float(est[0])
    gammas = np.empty(est.size - 1)
    for k in range(1, est.size):
        g = kernel_K(kernel_div(est[k], agg) / (kap[k - 1] * lam[k]))
        gammas[k - 1] = g
        if g == 1.0:
            agg = float(est[k])
        elif g > 0.0:
            agg = 1.0 / (g / est[k] + (1.0 - g) / agg)
    return agg, gammas


@dataclass(frozen=True)
class SagesState:
    lambdas: np.ndarray
    kappas: np.ndarray
    estimators: tuple
    value: float
    gammas: Optional[np.ndarray] = None

    @property
    def estimates(self) -> np.ndarray:
        return np.array([float(e.sigma[0, 0]) for e in self.estimators])


def sages_start(sigma0: float, lambdas, kappas) -> SagesState:
    lam = _check_grid(lambdas)
    kap = np.asarray(kappas, dtype=float)
    if kap.size != lam.size - 1 or np.any(kap <= 0):
        raise ValueError("need K-1 positive critical values")
    if not sigma0 > 0:
        raise ValueError("starting variance must be positive")
    ests = tuple(VolEstimatorState.start(sigma0, FixedStep(float(l))) for l in lam)
    return SagesState(lam, kap, ests, float(sigma0))


def sages_update(state: SagesState, breve) -> SagesState:
    """Feed one update matrix (1x1) to every sub-estimator and recombine."""
    b = np.atleast_2d(np.asarray(breve, dtype=float))
    if b.shape != (1, 1):
        raise ValueError("SAGES is univariate")
    ests = tuple(update_tv(e, b) for e in state.estimators)
    value, gammas = sages_combine([e.sigma[0, 0] for e in ests], state.lambdas, state.kappas)
    return replace(state, estimators=ests, value=value, gammas=gammas)


class SagesBank:
    """Array form of the K sub-estimators for long runs (same arithmetic as ``sages_update``)."""

    def __init__(self, sigma0: float, lambdas, kappas):
        self.lambdas = _check_grid(lambdas)
        self.kappas = np.asarray(kappas, dtype=float)
        if self.kappas.size != self.lambdas.size - 1 or np.any(self.kappas <= 0):
            raise ValueError("need K-1 positive critical values")
        self.estimates = np.full(self.lambdas.size, float(sigma0))
        self.value = float(sigma0)
        self.gammas = np.ones(self.lambdas.size - 1)

    def update(self, breve: float) -> float:
        self.estimates = (1.0 - self.lambdas) * self.estimates + self.lambdas * breve
        self.value, self.gammas = sages_combine(self.estimates, self.lambdas, self.kappas)
        return self.value


# -- critical values -------------------------------------------------------------

def kappa_from_paths(paths: np.ndarray, lambdas, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Critical values from null trajectories of the K estimators.

    ``paths`` has shape (runs, steps, K).  Calibration is sequential in k: with
    kappa_1..kappa_{k-2} fixed, the aggregate up to k-1 is formed on every
    path and kappa_{k-1} is set so that the scaled divergence stays on the
    kernel's plateau (gamma_k = 1) in a fraction ``1 - alpha`` of all steps.
    """
    lam = _check_grid(lambdas)
    p = np.asarray(paths, dtype=float).reshape(-1, lam.size)
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    if np.any(p <= 0):
        raise ValueError("null paths must be positive")
    agg = p[:, 0].copy()
    kappas = np.empty(lam.size - 1)
    for k in range(1, lam.size):
        r = p[:, k] / agg
        stat = -0.5 * (np.log(r) + 1.0 - r) / lam[k]
        q = float(np.max(stat)) if alpha == 0.0 else float(np.quantile(stat, 1.0 - alpha))
        kappas[k - 1] = max(q / KNEE, np.finfo(float).tiny)
        u = stat / kappas[k - 1]
        g = np.clip(1.0 - np.maximum(u - KNEE, 0.0), 0.0, 1.0)
        agg = 1.0 / (g / p[:, k] + (1.0 - g) / agg)
    return kappas


def null_paths(lambdas, sigma2: float = 1e-8, n_particles: int = 500, runs: int = 200,
               n_ticks: int = 2000, p0: float = 50.0, tick_size: float = 0.01, seed: int = 0,
               burn_in: int = 0) -> np.ndarray:
    """Trajectories (runs, steps, K) of fixed-step estimators under constant volatility.

    The filter propagates with the true variance so the K recursions see
    the same update matrices they would see under a correct aggregate.
    """
    lam = _check_grid(lambdas)
    out = np.empty((runs, n_ticks - 1 - burn_in, lam.size))
    for r in range(runs):
        path = gen_path(n_ticks, ConstantVol(sigma2), p0, tick_size, seed=seed + r)
        ticks = apply_noise(path, "deterministic", tick_size, seed=seed + r)
        cloud = init_cloud(support_simple_deterministic(ticks.prices[0], tick_size), n_particles,
                           seed + r, tick_size=tick_size)
        est = np.full(lam.size, sigma2)
        sig = np.array([[sigma2]])
        for j in range(1, n_ticks):
            box = support_simple_deterministic(ticks.prices[j], tick_size)
            step(cloud, sig, box)
            est = (1.0 - lam) * est + lam * breve_sigma(cloud)[0, 0]
            if j - 1 >= burn_in:
                out[r, j - 1 - burn_in] = est
    return out


def calibrate_kappa(lambdas, sigma2: float = 1e-8, n_particles: int = 500, runs: int = 200,
                    n_ticks: int = 2000, alpha: float = DEFAULT_ALPHA, seed: int = 0,
                    p0: float = 50.0, tick_size: float = 0.01) -> np.ndarray:
    """Monte Carlo critical values for the given (decreasing) step grid."""
    if runs < 200:
        raise ValueError("calibration needs at least 200 runs")
    paths = null_paths(lambdas, sigma2, n_particles, runs, n_ticks, p0, tick_size, seed)
    return kappa_from_paths(paths, lambdas, alpha)


# -- sidecar file ------------------------------------------------------------------

def config_hash(lambdas, sigma2: float, n_particles: int) -> str:
    lam = np.asarray(lambdas, dtype=float)
    text = f"K={lam.size};lambdas={','.join(f'{v:.17g}' for v in lam)};sigma2={sigma2:.17g};N={n_particles}"
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def write_kappa(path, kappas, lambdas, sigma2: float, n_particles: int) -> None:
    lam = np.asarray(lambdas, dtype=float)
    lines = [f"# kappa {config_hash(lam, sigma2, n_particles)} K={lam.size} sigma2={sigma2:.17g} "
             f"N={n_particles} lambdas={','.join(f'{v:.17g}' for v in lam)}"]
    lines += [f"{k:.17g}" for k in kappas]
    Path(path).write_text("\n".join(lines) + "\n")


def read_kappa(path, lambdas=None, sigma2: Optional[float] = None,
               n_particles: Optional[int] = None) -> tuple[np.ndarray, dict]:
    """Load critical values; when a config is given its hash must match the header."""
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# kappa "):
        raise ValueError(f"{path} is not a kappa sidecar")
    fields = text[0].split()
    meta = {"hash": fields[2]}
    for f in fields[3:]:
        key, _, val = f.partition("=")
        meta[key] = val
    meta["lambdas"] = np.array([float(v) for v in meta["lambdas"].split(",")])
    meta["sigma2"] = float(meta["sigma2"])
    meta["N"] = int(meta["N"])
    kappas = np.array([float(line) for line in text[1:] if line.strip()])
    if kappas.size != meta["lambdas"].size - 1:
        raise ValueError("sidecar has the wrong number of critical values")
    if lambdas is not None:
        expect = config_hash(lambdas, meta["sigma2"] if sigma2 is None else sigma2,
                             meta["N"] if n_particles is None else n_particles)
        if expect != meta["hash"]:
            raise ValueError("kappa sidecar was calibrated for a different configuration")
    return kappas, meta
