#!/usr/bin/env python3
"""Return ACF/PACF and zero-return fractions under deterministic vs stochastic rounding.

Both noise models are applied to the same latent path, so the comparison is paired.
"""
import argparse

from tickvol.simulator import ConstantVol, apply_noise, gen_path, return_acf, return_pacf, zero_return_fraction


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ticks", type=int, default=10_000)
    ap.add_argument("--sigma", type=float, default=1e-4)
    ap.add_argument("--p0", type=float, default=50.0)
    ap.add_argument("--max-lag", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    path = gen_path(args.ticks, ConstantVol(args.sigma ** 2), p0=args.p0, seed=args.seed)
    print("model,statistic,lag,value")
    for kind in ("deterministic", "stochastic"):
        y = apply_noise(path, kind, seed=args.seed).prices
        for k, v in enumerate(return_acf(y, args.max_lag), start=1):
            print(f"{kind},acf,{k},{v:.5f}")
        for k, v in enumerate(return_pacf(y, args.max_lag), start=1):
            print(f"{kind},pacf,{k},{v:.5f}")
        print(f"{kind},zero_return_fraction,0,{zero_return_fraction(y):.5f}")


if __name__ == "__main__":
    main()
