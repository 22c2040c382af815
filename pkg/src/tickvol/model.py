"""State-space model pieces: tick records, support boxes and the noise models.

An observed trade price ``y`` is a (generalized) rounding of the latent
efficient price ``exp(x)``.  Each noise model is described only through the
inverse image of the rounding map, the support box ``A`` with
``exp(x) in A``.  Boxes live in price space; the filter works on their log view.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

GRID_RTOL = 1e-9


class StateMode(str, Enum):
    TRANSACTION = "transaction"
    CLOCK = "clock"


@dataclass(frozen=True)
class TickObservation:
    time: float
    price: float
    bid: Optional[float] = None
    ask: Optional[float] = None
    book_levels: Optional[tuple] = None
    exchange: str = ""
    sale_condition: str = ""

    def __post_init__(self):
        if not self.price > 0:
            raise ValueError(f"price must be positive, got {self.price}")
        if self.bid is not None and self.ask is not None and not self.bid < self.ask:
            raise ValueError(f"bid {self.bid} must be below ask {self.ask}")
        if self.book_levels is not None:
            levels = np.asarray(self.book_levels, dtype=float)
            if np.any(np.diff(levels) <= 0):
                raise ValueError("book levels must be strictly increasing")
            if not np.any(_close(levels, self.price)):
                raise ValueError("trade price is not a book level")


@dataclass(frozen=True)
class SupportBox:
    """Product of per-instrument price intervals.

    ``lower_closed`` records the ``[lower, upper)`` convention; it has no
    effect on the filter (boundaries have measure zero).
    """

    lower: np.ndarray
    upper: np.ndarray
    lower_closed: bool = True

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float, ndmin=1)
        hi = np.array(self.upper, dtype=float, ndmin=1)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be 1-d of equal length")
        # NaN fails both comparisons
        if not (np.all(lo >= 0) and np.all(lo < hi)):
            if np.isnan(lo).any() or np.isnan(hi).any():
                raise ValueError("NaN bound")
            if np.any(lo < 0):
                raise ValueError("price-space lower bound must be >= 0")
            raise ValueError(f"empty box: lower {lo} >= upper {hi}")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def interval(cls, lower: float, upper: float, lower_closed: bool = True) -> "SupportBox":
        return cls(np.array([max(lower, 0.0)]), np.array([upper]), lower_closed)

    @classmethod
    def product(cls, boxes: Sequence["SupportBox"]) -> "SupportBox":
        return cls(
            np.concatenate([b.lower for b in boxes]),
            np.concatenate([b.upper for b in boxes]),
            all(b.lower_closed for b in boxes),
        )

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def bounded(self) -> bool:
        return bool(np.all(self.lower > 0) and np.all(np.isfinite(self.upper)))

    def log_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        with np.errstate(divide="ignore"):
            return np.log(self.lower), np.log(self.upper)

    def contains(self, price) -> bool:
        p = np.atleast_1d(np.asarray(price, dtype=float))
        lower_ok = p >= self.lower if self.lower_closed else p > self.lower
        return bool(np.all(lower_ok & (p < self.upper)))

    def intersect(self, other: "SupportBox") -> "SupportBox":
        return SupportBox(np.maximum(self.lower, other.lower), np.minimum(self.upper, other.upper),
                          self.lower_closed and other.lower_closed)


def _close(a, b, rtol=GRID_RTOL):
    return np.abs(np.asarray(a) - b) <= rtol * np.maximum(np.abs(a), abs(b))


def _check_grid(y: float, tick_size: float) -> None:
    if not tick_size > 0:
        raise ValueError(f"tick_size must be positive, got {tick_size}")
    if not y > 0:
        raise ValueError(f"price must be positive, got {y}")
    n = round(y / tick_size)
    if not _close(n * tick_size, y):
        raise ValueError(f"price {y} is not on the {tick_size} grid")


def support_simple_deterministic(y: float, tick_size: float) -> SupportBox:
    """Nearest-grid-point rounding: ``[y - tick/2, y + tick/2)``."""
    _check_grid(y, tick_size)
    return SupportBox.interval(y - 0.5 * tick_size, y + 0.5 * tick_size)


def support_simple_stochastic(y: float, tick_size: float) -> SupportBox:
    """Floor or ceiling with probability 1/2 each: the open ``(y - tick, y + tick)``."""
    _check_grid(y, tick_size)
    return SupportBox.interval(y - tick_size, y + tick_size, lower_closed=False)


def support_order_book(y: float, levels: Sequence[float]) -> SupportBox:
    """Voronoi cell of the traded level among the book levels.

    Extreme levels get cells running to 0 or +inf in price space.
    """
    lv = np.asarray(levels, dtype=float)
    if lv.ndim != 1 or lv.size == 0:
        raise ValueError("need at least one book level")
    if np.any(np.diff(lv) <= 0):
        raise ValueError("book levels must be strictly increasing")
    hits = np.flatnonzero(_close(lv, y))
    if hits.size == 0:
        raise ValueError(f"trade {y} does not match any book level")
    i = int(hits[0])
    lower = 0.0 if i == 0 else 0.5 * (lv[i - 1] + lv[i])
    upper = math.inf if i == lv.size - 1 else 0.5 * (lv[i] + lv[i + 1])
    return SupportBox.interval(lower, upper)


def support_market_maker(y: float, bid: float, ask: float) -> SupportBox:
    if not bid < ask:
        raise ValueError(f"bid {bid} must be below ask {ask}")
    if not (_close(y, bid) or _close(y, ask)):
        raise ValueError(f"trade {y} matches neither bid {bid} nor ask {ask}")
    half = 0.5 * (ask - bid)
    return SupportBox.interval(y - half, y + half)


def support_spread_estimate(y: float, y_prev: Optional[float], half_spread_prev: Optional[float],
                            tick_size: Optional[float] = None) -> tuple[float, SupportBox]:
    """Half-spread estimated from the last non-zero price change.

    Before any price change has been seen there is no estimate; with
    ``tick_size`` given the box falls back to nearest-tick rounding and the
    returned half-spread is ``tick_size / 2``.
    """
    if y_prev is not None and not _close(y, y_prev):
        half = 0.5 * abs(y - y_prev)
    elif half_spread_prev is not None:
        if not half_spread_prev > 0:
            raise ValueError("half spread must be positive")
        half = half_spread_prev
    else:
        if tick_size is None:
            raise ValueError("no price change seen yet and no tick size to fall back on")
        return 0.5 * tick_size, support_simple_deterministic(y, tick_size)
    return half, SupportBox.interval(y - half, y + half)


@dataclass
class NoiseModel:
    """Rounding model used to turn ticks into support boxes.

    ``kind`` is one of ``deterministic``, ``stochastic``, ``order_book``,
    ``market_maker``, ``spread_estimate``.  Only ``spread_estimate`` carries
    running state (the last price and half-spread).
    """

    kind: str = "deterministic"
    tick_size: float = 0.01
    half_spread: Optional[float] = field(default=None, repr=False)
    _last_price: Optional[float] = field(default=None, repr=False)

    KINDS = ("deterministic", "stochastic", "order_book", "market_maker", "spread_estimate")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown noise model {self.kind!r}")
        if not self.tick_size > 0:
            raise ValueError("tick_size must be positive")

    def support(self, tick: TickObservation) -> SupportBox:
        if self.kind == "deterministic":
            return support_simple_deterministic(tick.price, self.tick_size)
        if self.kind == "stochastic":
            return support_simple_stochastic(tick.price, self.tick_size)
        if self.kind == "order_book":
            if tick.book_levels is None:
                raise ValueError("order book model needs book levels on every tick")
            return support_order_book(tick.price, tick.book_levels)
        if self.kind == "market_maker":
            if tick.bid is None or tick.ask is None:
                raise ValueError("market maker model needs bid and ask on every tick")
            return support_market_maker(tick.price, tick.bid, tick.ask)
        half, box = support_spread_estimate(tick.price, self._last_price, self.half_spread, self.tick_size)
        changed = self._last_price is not None and not _close(tick.price, self._last_price)
        # the tick-size fallback is not an estimate; keep waiting for a price change
        if changed or self.half_spread is not None:
            self.half_spread = half
        self._last_price = tick.price
        return box


def transition_variance(mode: StateMode | str, sigma, dt: Optional[float] = None) -> np.ndarray:
    """Covariance of one latent step: ``sigma`` per transaction, or ``dt * sigma`` per second."""
    sig = np.atleast_2d(np.asarray(sigma, dtype=float))
    if StateMode(mode) is StateMode.TRANSACTION:
        return sig
    if dt is None or not dt > 0:
        raise ValueError(f"clock-time step needs dt > 0, got {dt}")
    return dt * sig
