"""Streaming estimation loop: ticks in, one estimate row per filter step out."""
from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .benchmark import bench_init, bench_update_const, bench_update_tv, oracle_update, OracleState
from .filter import init_cloud, step
from .model import NoiseModel, StateMode, SupportBox, TickObservation
from .sages import SagesBank
from .seqem import (ConstantStep, DurationState, FixedStep, VolEstimatorState, breve_sigma,
                    breve_sigma_clock, cv_criterion, select_grid_min, update, update_duration)
from .simulator import NoisyTicks

FILTER_MODES = ("const-gamma", "tv-lambda", "tv-sages", "clock", "clock-alt")
BENCH_MODES = ("benchmark-const", "benchmark-tv")
MODES = FILTER_MODES + BENCH_MODES + ("oracle",)
CLOCK_MODES = ("clock", "clock-alt")


@dataclass
class EstimatorConfig:
    mode: str = "const-gamma"
    sigma0: Optional[float] = None  # starting variance (per trade; per second in clock mode)
    n_particles: int = 500
    ess_fraction: float = 0.2
    gamma: float = 0.9
    lambda0: float = 1.0
    lam: Optional[float] = None
    lambdas: Optional[Sequence[float]] = None  # SAGES grid, decreasing
    kappas: Optional[Sequence[float]] = None
    lambda_dur: float = 0.1025
    k_lag: int = 1
    seed: int = 0
    noise: str = "deterministic"
    tick_size: float = 0.01

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mode == "tv-lambda" and self.lam is None:
            raise ValueError("tv-lambda needs a step size lam")
        if self.mode == "benchmark-tv" and self.lam is None:
            raise ValueError("benchmark-tv needs a step size lam")
        if self.mode == "tv-sages" and (self.lambdas is None or self.kappas is None):
            raise ValueError("tv-sages needs a step grid and critical values")
        if self.mode in FILTER_MODES and self.sigma0 is None:
            raise ValueError(f"{self.mode} needs a starting variance sigma0")

    def policy(self):
        if self.lam is not None and self.mode != "const-gamma":
            return FixedStep(self.lam)
        return ConstantStep(self.gamma, self.lambda0)


@dataclass
class EstimateRow:
    time: float
    j: int
    price: np.ndarray
    sigma2: np.ndarray
    sigma2_c: Optional[np.ndarray] = None
    ess: float = float("nan")
    resampled: bool = False
    diverged: bool = False
    breve: Optional[np.ndarray] = field(default=None, repr=False)
    seconds: float = 0.0


def ticks_from_arrays(ticks: NoisyTicks) -> list[TickObservation]:
    out = []
    for j in range(ticks.prices.size):
        out.append(TickObservation(
            time=float(ticks.times[j]),
            price=float(ticks.prices[j]),
            bid=None if ticks.bids is None else float(ticks.bids[j]),
            ask=None if ticks.asks is None else float(ticks.asks[j]),
            book_levels=None if ticks.books is None else ticks.books[j],
        ))
    return out


def _as_group(tick) -> tuple:
    return (tick,) if isinstance(tick, TickObservation) else tuple(tick)


def _group_box(models: list[NoiseModel], group: tuple) -> SupportBox:
    boxes = [m.support(t) for m, t in zip(models, group)]
    return boxes[0] if len(boxes) == 1 else SupportBox.product(boxes)


def _group_time(group: tuple) -> float:
    t = group[0].time
    if any(g.time != t for g in group[1:]):
        raise ValueError("multivariate input needs synchronous timestamps")
    return t


def estimate_stream(ticks: Iterable, config: EstimatorConfig, truth: Optional[Iterable[float]] = None
                    ) -> Iterator[EstimateRow]:
    """Run the configured estimator over a tick stream.

    ``ticks`` yields ``TickObservation`` objects, or tuples of them (one per
    instrument, synchronous) for multivariate runs.  One row is produced for
    every tick after the first.  ``truth`` (latent log-prices) is required by
    the oracle mode only.
    """
    mode = config.mode
    if mode == "oracle":
        if truth is None:
            raise ValueError("oracle mode needs the latent log-prices")
        yield from _oracle_stream(ticks, truth, config)
        return
    if mode in BENCH_MODES:
        yield from _bench_stream(ticks, config)
        return
    yield from _filter_stream(ticks, config)


def _filter_stream(ticks: Iterable, cfg: EstimatorConfig) -> Iterator[EstimateRow]:
    it = iter(ticks)
    try:
        first = _as_group(next(it))
    except StopIteration:
        return
    dim = len(first)
    models = [NoiseModel(cfg.noise, cfg.tick_size) for _ in range(dim)]
    box = _group_box(models, first)
    prices = np.array([t.price for t in first])
    cloud = init_cloud(box, cfg.n_particles, cfg.seed, k_lag=cfg.k_lag, ess_fraction=cfg.ess_fraction,
                       anchor=prices, tick_size=cfg.tick_size)
    clock = cfg.mode == "clock"
    state_mode = StateMode.CLOCK if clock else StateMode.TRANSACTION
    sigma0 = np.atleast_2d(np.asarray(cfg.sigma0, dtype=float))
    if sigma0.shape != (dim, dim):
        sigma0 = sigma0[0, 0] * np.eye(dim) if sigma0.size == 1 else sigma0
    use_sages = cfg.mode == "tv-sages" or (cfg.mode in CLOCK_MODES and cfg.kappas is not None)
    if use_sages:
        if dim != 1:
            raise ValueError("SAGES is univariate")
        bank = SagesBank(float(sigma0[0, 0]), cfg.lambdas, cfg.kappas)
        sigma_hat = sigma0
    else:
        est = VolEstimatorState.start(sigma0, cfg.policy(), cfg.k_lag, state_mode)
        sigma_hat = est.sigma
    duration = DurationState(cfg.lambda_dur) if cfg.mode in CLOCK_MODES else None
    times = [_group_time(first)]
    j = 1
    for tick in it:
        group = _as_group(tick)
        t0 = _time.perf_counter()
        j += 1
        t = _group_time(group)
        dt = t - times[-1]
        if cfg.mode in CLOCK_MODES and not dt > 0:
            raise ValueError(f"clock-time estimation needs strictly increasing times (tick {j})")
        times.append(t)
        if len(times) > cfg.k_lag + 1:
            times.pop(0)
        box = _group_box(models, group)
        prices = np.array([g.price for g in group])
        out = step(cloud, sigma_hat, box, dt if clock else None, state_mode, anchor=prices)
        breve = None
        if cloud.depth > cfg.k_lag:
            if clock:
                breve = breve_sigma_clock(cloud, cfg.k_lag, times[-1] - times[0])
            else:
                breve = breve_sigma(cloud, cfg.k_lag)
            if use_sages:
                sigma_hat = np.array([[bank.update(float(breve[0, 0]))]])
            else:
                est = update(est, breve)
                sigma_hat = est.sigma
        sigma_c = None
        sigma_row = sigma_hat
        if duration is not None:
            duration = update_duration(duration, dt)
            if clock:
                sigma_c = sigma_hat
                sigma_row = sigma_hat * duration.dbar
            else:
                sigma_c = sigma_hat / duration.dbar
        yield EstimateRow(t, j, prices, sigma_row, sigma_c, out.ess, out.resampled, out.diverged, breve,
                          _time.perf_counter() - t0)


def _bench_stream(ticks: Iterable, cfg: EstimatorConfig) -> Iterator[EstimateRow]:
    it = iter(ticks)
    try:
        t1 = _as_group(next(it))
        t2 = _as_group(next(it))
    except StopIteration:
        return
    if len(t1) != 1:
        raise ValueError("benchmark estimators are univariate")
    tv = cfg.mode == "benchmark-tv"
    c0 = _time.perf_counter()
    state = bench_init(np.log(t1[0].price), np.log(t2[0].price), cfg.sigma0 if tv else None)
    yield EstimateRow(t2[0].time, 2, np.array([t2[0].price]), np.array([[state.sigma]]),
                      seconds=_time.perf_counter() - c0)
    for tick in it:
        g = _as_group(tick)[0]
        c0 = _time.perf_counter()
        ly = np.log(g.price)
        state = bench_update_tv(state, ly, cfg.lam) if tv else bench_update_const(state, ly)
        yield EstimateRow(g.time, state.j, np.array([g.price]), np.array([[state.sigma]]),
                          seconds=_time.perf_counter() - c0)


def _oracle_stream(ticks: Iterable, truth: Iterable[float], cfg: EstimatorConfig) -> Iterator[EstimateRow]:
    xs = iter(truth)
    state = OracleState(gamma=cfg.gamma)
    x_prev = None
    for j, tick in enumerate(ticks, start=1):
        g = _as_group(tick)[0]
        try:
            x = float(next(xs))
        except StopIteration:
            raise ValueError("truth series is shorter than the tick stream") from None
        if x_prev is not None:
            c0 = _time.perf_counter()
            state = oracle_update(state, x, x_prev)
            yield EstimateRow(g.time, j, np.array([g.price]), np.array([[state.sigma]]),
                              seconds=_time.perf_counter() - c0)
        x_prev = x


def run(ticks, config: EstimatorConfig, truth=None) -> list[EstimateRow]:
    return list(estimate_stream(ticks, config, truth))


def _check_informative(ticks: list, config: EstimatorConfig) -> None:
    models = None
    for tick in ticks:
        group = _as_group(tick)
        if models is None:
            models = [NoiseModel(config.noise, config.tick_size) for _ in group]
        box = _group_box(models, group)
        if np.any(box.lower > 0) or np.any(np.isfinite(box.upper)):
            return
    raise ValueError("every support box is uninformative")


def cv_select_lambda(ticks, grid: Sequence[float], config: EstimatorConfig) -> tuple[float, list[float]]:
    """Fixed step minimizing the one-step-ahead criterion; one filter pass per grid value.

    All passes share ``config.seed``.  This is an offline procedure.
    """
    ticks = list(ticks)
    if len(grid) == 0:
        raise ValueError("empty grid")
    if len(ticks) < 100:
        raise ValueError("need at least 100 ticks")
    _check_informative(ticks, config)
    crits = []
    for lam in grid:
        cfg = EstimatorConfig(**{**config.__dict__, "mode": "tv-lambda", "lam": float(lam)})
        rows = [r for r in estimate_stream(ticks, cfg) if r.breve is not None]
        crits.append(cv_criterion([r.sigma2 for r in rows], [r.breve for r in rows]))
    return select_grid_min(grid, crits), crits
