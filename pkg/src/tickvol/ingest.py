"""Tick-file cleaning, timestamp de-duplication and trade/quote matching.

Cleaning rules, applied in order:

* ``session``: drop records outside the trading session (closed at both ends),
* ``exchange``: keep only whitelisted exchange tags,
* ``condition``: drop blacklisted sale conditions and corrected trades.

Records are plain dataclasses; the CSV layer lives at the bottom of the file.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .model import GRID_RTOL, TickObservation

SESSION = (9.5 * 3600.0, 16.0 * 3600.0)
DEFAULT_EXCHANGES = ("N",)
# minimal stand-in for the vendor list of abnormal sale conditions
DEFAULT_CONDITIONS = ("O", "Z", "B", "T", "U", "L", "G", "W", "4", "7", "9")
TRADE_COLUMNS = ("time", "price", "exchange", "cond", "corr")
QUOTE_COLUMNS = ("time", "bid", "ask", "exchange")
RULES = ("parse", "session", "exchange", "condition", "corrected", "crossed")


def parse_time(text: str) -> float:
    """Seconds since midnight from ``12345.6`` or ``HH:MM:SS[.fff]``."""
    s = text.strip()
    if ":" in s:
        parts = s.split(":")
        if len(parts) != 3:
            raise ValueError(f"bad time {text!r}")
        h, m, sec = int(parts[0]), int(parts[1]), float(parts[2])
        if not (0 <= m < 60 and 0 <= sec < 60 and h >= 0):
            raise ValueError(f"bad time {text!r}")
        return h * 3600.0 + m * 60.0 + sec
    t = float(s)
    if not math.isfinite(t):
        raise ValueError(f"bad time {text!r}")
    return t


@dataclass(frozen=True)
class RawRecord:
    time: float
    kind: str = "trade"
    price: float = float("nan")
    bid: float = float("nan")
    ask: float = float("nan")
    exchange: str = ""
    cond: str = ""
    corrected: bool = False


@dataclass
class CleanConfig:
    session: tuple = SESSION
    exchanges: Optional[Sequence[str]] = DEFAULT_EXCHANGES  # None keeps every exchange
    conditions: Sequence[str] = DEFAULT_CONDITIONS
    drop_corrected: bool = True

    def __post_init__(self):
        lo, hi = self.session
        if not lo <= hi:
            raise ValueError("session start must not exceed its end")


def _sorted(records: Sequence[RawRecord]) -> list[RawRecord]:
    recs = list(records)
    if any(recs[i].time > recs[i + 1].time for i in range(len(recs) - 1)):
        recs.sort(key=lambda r: r.time)  # stable
    return recs


def clean(records: Iterable[RawRecord], config: Optional[CleanConfig] = None) -> tuple[list[RawRecord], dict]:
    """Apply the cleaning rules; returns the kept records and the number removed per rule."""
    cfg = config or CleanConfig()
    counts = dict.fromkeys(RULES, 0)
    lo, hi = cfg.session
    exch = None if cfg.exchanges is None else set(cfg.exchanges)
    conds = set(cfg.conditions)
    kept = []
    for r in _sorted(records):
        if not lo <= r.time <= hi:
            counts["session"] += 1
        elif exch is not None and r.exchange not in exch:
            counts["exchange"] += 1
        elif r.kind == "trade" and r.cond in conds:
            counts["condition"] += 1
        elif r.kind == "trade" and cfg.drop_corrected and r.corrected:
            counts["corrected"] += 1
        elif r.kind == "quote" and not r.bid < r.ask:
            counts["crossed"] += 1
        else:
            kept.append(r)
    counts["kept"] = len(kept)
    return kept, counts


def despread_times(times) -> np.ndarray:
    """Spread every run of equal stamps evenly up to the next distinct stamp.

    A run ``t_j = ... = t_{k-1} < t_k`` becomes ``t_j + (l - j)(t_k - t_j)/(k - j)``.
    A run at the end of the stream has no following stamp; it is spread over
    the gap preceding it (one second if there is none).
    """
    t = np.asarray(times, dtype=float)
    if t.ndim != 1:
        raise ValueError("times must be 1-d")
    if np.any(np.diff(t) < 0):
        raise ValueError("times must be sorted")
    out = t.copy()
    n = t.size
    j = 0
    prev_gap = 1.0
    while j < n:
        k = j + 1
        while k < n and t[k] == t[j]:
            k += 1
        if k - j > 1:
            end = t[k] if k < n else t[j] + prev_gap
            out[j:k] = t[j] + np.arange(k - j) * (end - t[j]) / (k - j)
        if k < n:
            prev_gap = t[k] - t[j]
        j = k
    return out


def despread_timestamps(records: Sequence[RawRecord]) -> list[RawRecord]:
    new = despread_times([r.time for r in records])
    return [replace(r, time=float(t)) for r, t in zip(records, new)]


def _on_quote(price: float, quote: float) -> bool:
    return abs(price - quote) <= GRID_RTOL * max(abs(price), abs(quote))


@dataclass
class MatchResult:
    ticks: list  # TickObservation for matched trades only
    matched: np.ndarray  # one flag per input trade
    side: list  # "bid", "ask" or "" per input trade
    latency_offset: float = 0.0

    @property
    def unmatched_fraction(self) -> float:
        return float(1.0 - self.matched.mean()) if self.matched.size else 0.0


def match_quotes(trades: Sequence[RawRecord], quotes: Sequence[RawRecord],
                 latency_offset: float = 0.0) -> MatchResult:
    """Attach to each trade the latest quote stamped at or before ``time - latency_offset``.

    Trades without an earlier quote, or priced at neither side of it, are
    flagged unmatched and left out of ``ticks``.
    """
    qt = np.array([q.time for q in quotes], dtype=float)
    if np.any(np.diff(qt) < 0):
        raise ValueError("quotes must be sorted by time")
    idx = np.searchsorted(qt, [tr.time - latency_offset for tr in trades], side="right") - 1
    matched = np.zeros(len(trades), dtype=bool)
    side = [""] * len(trades)
    ticks = []
    for i, (tr, q) in enumerate(zip(trades, idx)):
        if q < 0:
            continue
        bid, ask = quotes[q].bid, quotes[q].ask
        if _on_quote(tr.price, ask):
            side[i] = "ask"
        elif _on_quote(tr.price, bid):
            side[i] = "bid"
        else:
            continue
        matched[i] = True
        ticks.append(TickObservation(tr.time, tr.price, bid=bid, ask=ask,
                                     exchange=tr.exchange, sale_condition=tr.cond))
    return MatchResult(ticks, matched, side, latency_offset)


# -- CSV ---------------------------------------------------------------------------

def _require(header, columns, path) -> None:
    missing = [c for c in columns if c not in (header or [])]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")


def _truthy(text: str) -> bool:
    s = text.strip().lower()
    if s in ("", "0", "false", "no", "n", "00"):
        return False
    try:
        return float(s) != 0
    except ValueError:
        return True


def read_trades(path) -> tuple[list[RawRecord], int]:
    """Trade records and the number of unparseable rows skipped."""
    bad = 0
    out = []
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        _require(rd.fieldnames, TRADE_COLUMNS, path)
        for row in rd:
            try:
                price = float(row["price"])
                if not (math.isfinite(price) and price > 0):
                    raise ValueError
                out.append(RawRecord(parse_time(row["time"]), "trade", price,
                                     exchange=row["exchange"].strip(), cond=row["cond"].strip(),
                                     corrected=_truthy(row["corr"])))
            except (ValueError, TypeError, AttributeError):
                bad += 1
    return out, bad


def read_quotes(path) -> tuple[list[RawRecord], int]:
    bad = 0
    out = []
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        _require(rd.fieldnames, QUOTE_COLUMNS, path)
        for row in rd:
            try:
                bid, ask = float(row["bid"]), float(row["ask"])
                if not (math.isfinite(bid) and math.isfinite(ask) and bid > 0):
                    raise ValueError
                out.append(RawRecord(parse_time(row["time"]), "quote", bid=bid, ask=ask,
                                     exchange=row["exchange"].strip()))
            except (ValueError, TypeError, AttributeError):
                bad += 1
    return out, bad


def fmt(x: float) -> str:
    return f"{x:.17g}"


def write_records(path, records: Sequence[RawRecord]) -> None:
    """Write records back in their input schema (trades or quotes, not mixed)."""
    kinds = {r.kind for r in records}
    if len(kinds) > 1:
        raise ValueError("cannot mix trades and quotes in one file")
    quotes = kinds == {"quote"}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(QUOTE_COLUMNS if quotes else TRADE_COLUMNS)
        for r in records:
            if quotes:
                w.writerow([fmt(r.time), fmt(r.bid), fmt(r.ask), r.exchange])
            else:
                w.writerow([fmt(r.time), fmt(r.price), r.exchange, r.cond, int(r.corrected)])


def write_audit(path, counts: dict, extra: Optional[dict] = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "value"])
        for k, v in {**counts, **(extra or {})}.items():
            w.writerow([k, fmt(v) if isinstance(v, float) else v])


# -- tick files (estimator input) ----------------------------------------------------

def write_ticks(path, times, prices, bids=None, asks=None, books=None, exchanges=None, conds=None) -> None:
    """Tick file: the trade schema plus optional ``bid,ask`` and ``book`` (``;``-separated levels) columns."""
    cols = list(TRADE_COLUMNS)
    if bids is not None:
        cols += ["bid", "ask"]
    if books is not None:
        cols += ["book"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for j in range(len(prices)):
            row = [fmt(times[j]), fmt(prices[j]), "N" if exchanges is None else exchanges[j],
                   "" if conds is None else conds[j], 0]
            if bids is not None:
                row += [fmt(bids[j]), fmt(asks[j])]
            if books is not None:
                row += [";".join(fmt(v) for v in books[j])]
            w.writerow(row)


def iter_ticks(path) -> Iterator[TickObservation]:
    """Stream a tick file; malformed rows raise (input is expected to be clean)."""
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        _require(rd.fieldnames, ("time", "price"), path)
        has_q = "bid" in rd.fieldnames and "ask" in rd.fieldnames
        has_b = "book" in rd.fieldnames
        for n, row in enumerate(rd, start=2):
            try:
                yield TickObservation(
                    parse_time(row["time"]), float(row["price"]),
                    bid=float(row["bid"]) if has_q else None,
                    ask=float(row["ask"]) if has_q else None,
                    book_levels=tuple(float(v) for v in row["book"].split(";")) if has_b else None,
                    exchange=(row.get("exchange") or "").strip(),
                    sale_condition=(row.get("cond") or "").strip(),
                )
            except (ValueError, TypeError, AttributeError) as exc:
                raise ValueError(f"{path}:{n}: malformed row ({exc})") from None


def iter_truth(path) -> Iterator[float]:
    """Latent log-prices from a ``time,x`` file."""
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        _require(rd.fieldnames, ("time", "x"), path)
        for row in rd:
            yield float(row["x"])


def write_truth(path, times, x) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "x"])
        for t, v in zip(times, x):
            w.writerow([fmt(t), fmt(v)])
