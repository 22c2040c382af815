"""Command-line front end.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines; keys are
flag names (dashes or underscores) and explicit flags win over the file.
"""
from __future__ import annotations

import argparse
import csv
import statistics
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import ingest
from .benchmark import bench_cv
from .pipeline import MODES, EstimatorConfig, cv_select_lambda, estimate_stream
from .sages import calibrate_kappa, clock_grid, read_kappa, transaction_grid, write_kappa
from .seqem import select_duration_lambda
from .simulator import (ConstantSeriesError, ConstantVol, SinusoidVol, StepVol, UShapeVol, apply_noise,
                        gen_path, parse_arrivals, return_acf, return_pacf, zero_return_fraction)

DEFAULT_KAPPA = Path(__file__).parent / "data" / "kappa_default.txt"
NOISE_KINDS = ("deterministic", "stochastic", "order_book", "market_maker", "spread_estimate")


class UsageError(Exception):
    pass


fmt = ingest.fmt


# -- argument helpers --------------------------------------------------------------

def parse_grid(text: str) -> np.ndarray:
    """``a,b,c`` or ``start:stop:N`` (linear) or ``start:stop:Nlog`` (geometric)."""
    s = text.strip()
    if ":" not in s:
        vals = np.array([float(v) for v in s.split(",") if v.strip()])
    else:
        parts = s.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}")
        a, b, n = float(parts[0]), float(parts[1]), parts[2].strip()
        log = n.endswith("log")
        n = int(n[:-3] if log else n.removesuffix("lin"))
        if n < 1:
            raise argparse.ArgumentTypeError("grid needs at least one point")
        if log:
            if not (a > 0 and b > 0):
                raise argparse.ArgumentTypeError("log grid needs positive end points")
            vals = np.geomspace(a, b, n)
        else:
            vals = np.linspace(a, b, n)
    if vals.size == 0:
        raise argparse.ArgumentTypeError("empty grid")
    return vals


def parse_vol(text: str):
    """``constant:S2``, ``step:BEFORE,AFTER,AT``, ``sinusoid:BASE,AMP,PERIOD``, ``ushape:OPEN,MID,CLOSE,LEN``."""
    kind, _, args = text.partition(":")
    try:
        vals = [float(v) for v in args.split(",")] if args else []
        if kind == "constant":
            return ConstantVol(*vals)
        if kind == "step":
            return StepVol(*vals)
        if kind == "sinusoid":
            return SinusoidVol(*vals)
        if kind == "ushape":
            return UShapeVol(*vals)
    except (TypeError, ValueError) as exc:
        raise argparse.ArgumentTypeError(f"bad volatility curve {text!r}: {exc}") from None
    raise argparse.ArgumentTypeError(f"unknown volatility curve {text!r}")


def _bool(text: str) -> bool:
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def read_config(path) -> dict:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        out[key.strip().replace("-", "_")] = val.strip()
    return out


def _config_path(argv: Sequence[str]) -> Optional[str]:
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, subparsers: dict, argv: Sequence[str]) -> argparse.Namespace:
    """Install config-file values as subcommand defaults, then parse the flags over them."""
    path = _config_path(argv)
    sub = next((subparsers[a] for a in argv if a in subparsers), None)
    if path is None or sub is None:
        return parser.parse_args(argv)
    known = {a.dest: a for a in sub._actions}
    for key, val in read_config(path).items():
        if key not in known or key in ("help", "config", "what"):
            raise UsageError(f"unknown config key {key!r}")
        action = known[key]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            val = _bool(val)
        elif action.nargs in ("+", "*"):
            val = [action.type(v) if action.type else v for v in val.split()]
        elif action.type is not None:
            try:
                val = action.type(val)
            except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
        if action.choices is not None and val not in action.choices:
            raise UsageError(f"config key {key!r}: {val!r} not one of {list(action.choices)}")
        action.required = False
        sub.set_defaults(**{key: val})
    return parser.parse_args(argv)


def _need_seed(args) -> int:
    if args.seed is None:
        raise UsageError("--seed is required")
    return int(args.seed)


# -- subcommands -------------------------------------------------------------------

def cmd_simulate(args) -> int:
    seed = _need_seed(args)
    vol = args.vol if args.vol is not None else ConstantVol(args.sigma ** 2)
    arrivals = parse_arrivals(args.arrivals)
    path = gen_path(args.n, vol, args.p0, args.tick_size, arrivals, args.time_mode, seed)
    ticks = apply_noise(path, args.noise, args.tick_size, seed, args.book_depth)
    ingest.write_ticks(args.out, ticks.times, ticks.prices, ticks.bids, ticks.asks, ticks.books)
    if args.truth:
        ingest.write_truth(args.truth, path.times, path.x)
    return 0


def cmd_clean(args) -> int:
    trades, bad = ingest.read_trades(args.trades)
    cfg = ingest.CleanConfig(session=(ingest.parse_time(args.session_open), ingest.parse_time(args.session_close)),
                             exchanges=None if args.exchanges == ["*"] else args.exchanges,
                             conditions=args.conditions, drop_corrected=not args.keep_corrected)
    kept, counts = ingest.clean(trades, cfg)
    counts["parse"] += bad
    extra = {}
    bids = asks = None
    if args.quotes:
        quotes, qbad = ingest.read_quotes(args.quotes)
        quotes, qcounts = ingest.clean(quotes, cfg)
        match = ingest.match_quotes(kept, quotes, args.latency_offset)
        extra = {"quote_parse": qbad, "quote_session": qcounts["session"],
                 "quote_exchange": qcounts["exchange"], "quote_crossed": qcounts["crossed"],
                 "quotes_kept": qcounts["kept"], "latency_offset": float(args.latency_offset),
                 "unmatched_fraction": match.unmatched_fraction}
        kept = [r for r, m in zip(kept, match.matched) if m]
        bids = [t.bid for t in match.ticks]
        asks = [t.ask for t in match.ticks]
    if not args.no_despread:
        kept = ingest.despread_timestamps(kept)
    ingest.write_ticks(args.out, [r.time for r in kept], [r.price for r in kept], bids, asks,
                       exchanges=[r.exchange for r in kept], conds=[r.cond for r in kept])
    audit = args.audit or str(args.out) + ".audit.csv"
    ingest.write_audit(audit, counts, extra)
    return 0


def _estimator_config(args, mode: Optional[str] = None) -> EstimatorConfig:
    mode = mode or args.mode
    lambdas = kappas = None
    if mode == "tv-sages" or (mode in ("clock", "clock-alt") and args.sages):
        lambdas = args.grid if args.grid is not None else (
            clock_grid() if mode == "clock" else transaction_grid())
        kfile = args.kappa_file or DEFAULT_KAPPA
        kappas, meta = read_kappa(kfile)
        if meta["lambdas"].size != len(lambdas) or not np.allclose(meta["lambdas"], lambdas, rtol=1e-12):
            raise UsageError(f"{kfile} was calibrated for a different step grid")
    return EstimatorConfig(mode=mode, sigma0=args.sigma0, n_particles=args.particles,
                           ess_fraction=args.ess_fraction, gamma=args.gamma, lambda0=args.lambda0,
                           lam=args.lam, lambdas=lambdas, kappas=kappas, lambda_dur=args.lambda_dur,
                           k_lag=args.k_lag, seed=_need_seed(args), noise=args.noise,
                           tick_size=args.tick_size)


def _tick_stream(paths: Sequence[str]):
    if len(paths) == 1:
        yield from ingest.iter_ticks(paths[0])
        return
    streams = [ingest.iter_ticks(p) for p in paths]
    sentinel = object()
    while True:
        group = [next(s, sentinel) for s in streams]
        if all(g is sentinel for g in group):
            return
        if any(g is sentinel for g in group):
            raise ValueError("instrument files have different lengths")
        yield tuple(group)


def _matrix_columns(name: str, dim: int) -> list[str]:
    if dim == 1:
        return [name]
    return [f"{name}_{a + 1}{b + 1}" for a in range(dim) for b in range(a, dim)]


def _matrix_values(m: np.ndarray) -> list[str]:
    d = m.shape[0]
    return [fmt(m[a, b]) for a in range(d) for b in range(a, d)]


def cmd_estimate(args) -> int:
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    if args.mode == "oracle" and not args.truth:
        raise UsageError("oracle mode needs --truth (latent log-price CSV)")
    if args.mode in ("tv-lambda", "benchmark-tv") and args.lam is None:
        raise UsageError(f"{args.mode} needs --lam")
    if args.mode in ("const-gamma", "tv-lambda", "tv-sages", "clock", "clock-alt") and args.sigma0 is None:
        raise UsageError(f"{args.mode} needs --sigma0")
    cfg = _estimator_config(args)
    dim = len(args.input)
    if dim > 1 and args.mode not in ("const-gamma", "tv-lambda", "clock", "clock-alt"):
        raise UsageError(f"{args.mode} is univariate")
    truth = ingest.iter_truth(args.truth) if args.truth else None
    has_c = args.mode in ("clock", "clock-alt")
    head = ["time", "j"] + (["price"] if dim == 1 else [f"price_{i + 1}" for i in range(dim)])
    head += _matrix_columns(f"sigma2_hat_{args.mode}", dim)
    if has_c:
        head += _matrix_columns(f"sigma2_c_hat_{args.mode}", dim)
    head += ["ess", "resampled", "diverged"]
    seconds = []
    out = open(args.out, "w", newline="") if args.out != "-" else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(head)
        for row in estimate_stream(_tick_stream(args.input), cfg, truth):
            line = [fmt(row.time), row.j] + [fmt(p) for p in row.price] + _matrix_values(row.sigma2)
            if has_c:
                line += _matrix_values(row.sigma2_c)
            line += [fmt(row.ess), int(row.resampled), int(row.diverged)]
            w.writerow(line)
            seconds.append(row.seconds)
        if not args.no_timing and seconds:
            out.write(f"# update_seconds n={len(seconds)} median={fmt(statistics.median(seconds))} "
                      f"mean={fmt(statistics.fmean(seconds))} max={fmt(max(seconds))}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _write_trace(args, name: str, grid, crits, best: float) -> None:
    out = open(args.out, "w", newline="") if args.out and args.out != "-" else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow([name, "crit"])
        for g, c in zip(grid, crits):
            w.writerow([fmt(g), fmt(c)])
        out.write(f"# argmin {name}={fmt(best)}\n")
    finally:
        if out is not sys.stdout:
            out.close()


def cmd_calibrate(args) -> int:
    what = args.what
    if what == "kappa":
        seed = _need_seed(args)
        grid = args.grid if args.grid is not None else transaction_grid()
        kappas = calibrate_kappa(grid, args.sigma2, args.particles, args.runs, args.ticks, args.alpha, seed,
                                 args.p0, args.tick_size)
        write_kappa(args.out, kappas, grid, args.sigma2, args.particles)
        return 0
    if args.grid is None:
        raise UsageError("--grid is required")
    if not args.input:
        raise UsageError("--input is required")
    ticks = list(ingest.iter_ticks(args.input))
    if what == "duration":
        best, crits = select_duration_lambda([t.time for t in ticks], args.grid)
        _write_trace(args, "lambda_dur", args.grid, crits, best)
    elif what == "bench-lambda":
        best, crits = bench_cv(np.log([t.price for t in ticks]), args.grid, args.sigma0)
        _write_trace(args, "lambda", args.grid, crits, best)
    else:
        if args.sigma0 is None:
            raise UsageError("--sigma0 is required")
        cfg = EstimatorConfig(mode="tv-lambda", sigma0=args.sigma0, lam=float(args.grid[0]),
                              n_particles=args.particles, ess_fraction=args.ess_fraction,
                              seed=_need_seed(args), noise=args.noise, tick_size=args.tick_size,
                              k_lag=args.k_lag)
        best, crits = cv_select_lambda(ticks, args.grid, cfg)
        _write_trace(args, "lambda", args.grid, crits, best)
    return 0


def cmd_stylized(args) -> int:
    prices = np.array([t.price for t in ingest.iter_ticks(args.input)])
    try:
        acf = return_acf(prices, args.max_lag)
        pacf = return_pacf(prices, args.max_lag)
    except ConstantSeriesError as exc:
        raise UsageError(f"constant price series: {exc}") from None
    zero = zero_return_fraction(prices)
    out = open(args.out, "w", newline="") if args.out != "-" else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["statistic", "lag", "value"])
        for k, v in enumerate(acf, start=1):
            w.writerow(["acf", k, fmt(v)])
        for k, v in enumerate(pacf, start=1):
            w.writerow(["pacf", k, fmt(v)])
        w.writerow(["zero_return_fraction", 0, fmt(zero)])
        w.writerow(["n_returns", 0, prices.size - 1])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


# -- parser ------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--seed", type=int, help="master seed (mandatory where randomness is used)")


def _filter_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--noise", choices=NOISE_KINDS, default="deterministic")
    p.add_argument("--tick-size", type=float, default=0.01)
    p.add_argument("--particles", "-N", type=int, default=500)
    p.add_argument("--ess-fraction", type=float, default=0.2, help="resample when ESS < c*N")
    p.add_argument("--sigma0", type=float, help="starting variance (per trade, per second in clock mode)")
    p.add_argument("--k-lag", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tickvol", description="On-line spot volatility from tick data")
    subs = parser.add_subparsers(dest="command", required=True)
    parser._tickvol_subs = subs.choices

    p = subs.add_parser("simulate", help="simulate a latent path and noisy ticks")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="latent log-price CSV (time,x)")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--sigma", type=float, default=1e-4, help="constant volatility (per trade or per second)")
    p.add_argument("--vol", type=parse_vol, help="volatility curve, overrides --sigma")
    p.add_argument("--p0", type=float, default=50.0)
    p.add_argument("--tick-size", type=float, default=0.01)
    p.add_argument("--noise", choices=NOISE_KINDS, default="deterministic")
    p.add_argument("--book-depth", type=int, default=5)
    p.add_argument("--arrivals", default="equi:1")
    p.add_argument("--time-mode", choices=("transaction", "clock"), default="transaction")
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("clean", help="clean a trade file, optionally matching quotes")
    _common(p)
    p.add_argument("--trades", required=True)
    p.add_argument("--quotes")
    p.add_argument("--out", required=True)
    p.add_argument("--audit", help="audit sidecar (default OUT.audit.csv)")
    p.add_argument("--session-open", default="09:30:00")
    p.add_argument("--session-close", default="16:00:00")
    p.add_argument("--exchanges", nargs="+", default=list(ingest.DEFAULT_EXCHANGES), help="'*' keeps all")
    p.add_argument("--conditions", nargs="*", default=list(ingest.DEFAULT_CONDITIONS))
    p.add_argument("--keep-corrected", action="store_true")
    p.add_argument("--latency-offset", type=float, default=0.0)
    p.add_argument("--no-despread", action="store_true")
    p.set_defaults(func=cmd_clean)

    p = subs.add_parser("estimate", help="run an estimator over a tick file")
    _common(p)
    p.add_argument("--input", nargs="+", required=True, help="one tick file per instrument")
    p.add_argument("--out", default="-")
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--truth", help="latent log-price CSV for the oracle")
    _filter_flags(p)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--lambda0", type=float, default=1.0)
    p.add_argument("--lam", type=float)
    p.add_argument("--grid", type=parse_grid, help="SAGES step grid (default per mode)")
    p.add_argument("--kappa-file", help="SAGES critical values (default: packaged file)")
    p.add_argument("--sages", action="store_true", help="aggregate clock estimators with SAGES")
    p.add_argument("--lambda-dur", type=float, default=0.1025)
    p.add_argument("--threads", type=int, default=1,
                   help="accepted for interface compatibility; the filter is vectorized")
    p.add_argument("--no-timing", action="store_true", help="omit the wall-time footer")
    p.set_defaults(func=cmd_estimate)

    p = subs.add_parser("calibrate", help="choose step sizes or critical values")
    _common(p)
    p.add_argument("what", choices=("lambda", "kappa", "duration", "bench-lambda"))
    p.add_argument("--input")
    p.add_argument("--out")
    p.add_argument("--grid", type=parse_grid)
    _filter_flags(p)
    p.add_argument("--sigma2", type=float, default=1e-8, help="null variance for kappa")
    p.add_argument("--runs", type=int, default=200)
    p.add_argument("--ticks", type=int, default=2000)
    p.add_argument("--alpha", type=float, default=0.25)
    p.add_argument("--p0", type=float, default=50.0)
    p.set_defaults(func=cmd_calibrate)

    p = subs.add_parser("stylized", help="return ACF, PACF and zero-return fraction")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--max-lag", type=int, default=10)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_stylized)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, parser._tickvol_subs, argv)
        if args.command == "calibrate" and args.what == "kappa" and not args.out:
            raise UsageError("calibrate kappa needs --out")
        return args.func(args)
    except (UsageError, ValueError, OSError) as exc:
        print(f"tickvol: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
