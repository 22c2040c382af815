import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from tickvol.simulator import (ConstantSeriesError, ConstantVol, Equispaced, InhomPoisson, PiecewiseLinearVol,
                               Poisson, SinusoidVol, StepVol, UShapeVol, apply_noise, durbin_levinson, gen_path,
                               parse_arrivals, return_acf, return_pacf, zero_return_fraction)


def test_constant_path_variance():
    path = gen_path(5000, ConstantVol(1e-8), p0=50.0, seed=1)
    inc = np.diff(path.x)
    assert np.var(inc) == pytest.approx(1e-8, rel=0.05)
    assert 49.995 <= math.exp(path.x[0]) < 50.005


def test_seed_determinism():
    a = gen_path(100, ConstantVol(1e-8), seed=4)
    b = gen_path(100, ConstantVol(1e-8), seed=4)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.times, b.times)
    assert not np.array_equal(a.x, gen_path(100, ConstantVol(1e-8), seed=5).x)


def test_clock_mode_poisson():
    path = gen_path(20_000, ConstantVol(2e-8), arrivals=Poisson(2.0), mode="clock", seed=2)
    assert np.all(np.diff(path.times) > 0)
    assert np.var(np.diff(path.x)) == pytest.approx(1e-8, rel=0.05)


def test_increments_are_gaussian():
    inc = np.diff(gen_path(10_000, ConstantVol(1e-8), seed=3).x)
    k = stats.kurtosis(inc, fisher=False)
    assert abs(k - 3.0) < 3 * math.sqrt(24 / inc.size)


def test_rejects_short_or_bad_curves():
    with pytest.raises(ValueError):
        gen_path(1, ConstantVol(1e-8))
    with pytest.raises(ValueError):
        ConstantVol(0.0)
    with pytest.raises(ValueError):
        SinusoidVol(1e-8, 2e-8, 100)
    with pytest.raises(ValueError):
        PiecewiseLinearVol(((0, 1e-8), (0, 2e-8)))


def test_vol_curves():
    assert StepVol(1.0, 9.0, 10)(np.array([9, 10]))[1] == 9.0
    u = UShapeVol(3.0, 1.0, 2.0, 100.0)
    np.testing.assert_allclose(u(np.array([0.0, 50.0, 100.0])), [3.0, 1.0, 2.0])
    assert PiecewiseLinearVol(((0, 1.0), (10, 3.0)))(5.0) == 2.0
    s = SinusoidVol(2.0, 1.0, 4.0)
    np.testing.assert_allclose(s(np.array([0.0, 1.0, 3.0])), [2.0, 3.0, 1.0])


def test_arrivals():
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(Equispaced(0.5).times(3, rng), [0.0, 0.5, 1.0])
    t = InhomPoisson(lambda s: 1.0 + 0.5 * math.sin(s), 1.5).times(500, rng)
    assert t.size == 500 and np.all(np.diff(t) > 0)
    assert isinstance(parse_arrivals("poisson:2.0"), Poisson)
    assert parse_arrivals("equi:1").dt == 1.0
    with pytest.raises(ValueError):
        parse_arrivals("hawkes:1")


def _path_at(price):
    path = gen_path(2, ConstantVol(1e-8), seed=0)
    path.x = np.full(2, math.log(price))
    return path


def test_noise_examples():
    assert apply_noise(_path_at(50.004), "deterministic").prices[0] == 50.00
    path = gen_path(100_000, ConstantVol(1e-12), seed=0)
    path.x = np.full(100_000, math.log(50.004))
    y = apply_noise(path, "stochastic", seed=1).prices
    assert set(np.unique(y)) == {50.00, 50.01}
    frac = np.mean(y == 50.01)
    assert abs(frac - 0.5) < 3 * math.sqrt(0.25 / y.size)


def test_noise_models_preserve_shape_and_contain():
    path = gen_path(2000, ConstantVol(1e-8), seed=6)
    p = np.exp(path.x)
    det = apply_noise(path, "deterministic")
    assert np.all(np.abs(det.prices - p) <= 0.005 + 1e-12)
    for kind in ("stochastic", "order_book", "market_maker", "spread_estimate"):
        t = apply_noise(path, kind, seed=6)
        assert t.prices.size == p.size
        np.testing.assert_array_equal(t.times, path.times)
    mm = apply_noise(path, "market_maker")
    assert np.all((mm.bids <= p) & (p < mm.asks))
    assert np.all((mm.prices == mm.bids) | (mm.prices == mm.asks))
    ob = apply_noise(path, "order_book", book_depth=3)
    assert all(len(b) == 7 for b in ob.books)
    assert all(np.isclose(y, b).any() for y, b in zip(ob.prices, ob.books))
    with pytest.raises(ValueError):
        apply_noise(path, "bogus")


def test_deterministic_more_zero_returns():
    path = gen_path(5000, ConstantVol(1e-8), seed=7)
    det = apply_noise(path, "deterministic")
    sto = apply_noise(path, "stochastic", seed=7)
    assert zero_return_fraction(det.prices) > zero_return_fraction(sto.prices)


def test_acf_white_noise_and_ma1():
    rng = np.random.default_rng(8)
    n = 20_000
    r = rng.normal(0, 1e-3, n)
    acf = return_acf(np.exp(np.concatenate([[0.0], np.cumsum(r)])), 3)
    assert abs(acf[0]) < 3 / math.sqrt(n)
    u = rng.normal(0, 1e-3, n + 1)
    ma = np.diff(u)
    acf = return_acf(np.exp(np.concatenate([[0.0], np.cumsum(ma)])), 2)
    assert acf[0] == pytest.approx(-0.5, abs=0.02)


def test_bid_ask_bounce_signature():
    path = gen_path(10_000, ConstantVol(1e-8), seed=9)
    y = apply_noise(path, "deterministic").prices
    assert return_acf(y, 1)[0] < -3 / math.sqrt(y.size - 1)


def test_pacf_matches_statsmodels():
    sm = pytest.importorskip("statsmodels.tsa.stattools")
    rng = np.random.default_rng(10)
    r = rng.normal(size=3000)
    r[1:] += 0.4 * r[:-1]
    prices = np.exp(np.concatenate([[0.0], np.cumsum(r * 1e-3)]))
    ours = return_pacf(prices, 8)
    ref = sm.pacf(np.diff(np.log(prices)), nlags=8, method="ldb")[1:]
    np.testing.assert_allclose(ours, ref, rtol=1e-8, atol=1e-12)


def test_durbin_levinson_ar1():
    phi = 0.6
    acf = phi ** np.arange(1, 6)
    np.testing.assert_allclose(durbin_levinson(acf), [0.6, 0, 0, 0, 0], atol=1e-12)


def test_constant_series_flagged():
    with pytest.raises(ConstantSeriesError):
        return_acf(np.full(20, 50.0), 2)
    with pytest.raises(ValueError):
        return_acf(np.array([50.0, 50.01]), 3)
    assert zero_return_fraction([1.0, 1.0, 2.0]) == 0.5


@given(st.integers(2, 300), st.integers(0, 10**6))
def test_deterministic_rounding_bound(n, seed):
    path = gen_path(n, ConstantVol(1e-6), seed=seed)
    y = apply_noise(path, "deterministic").prices
    assert np.all(np.abs(y - np.exp(path.x)) <= 0.005 + 1e-9)
