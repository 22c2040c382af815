import numpy as np
import pytest

from tickvol.pipeline import EstimatorConfig, cv_select_lambda, run, ticks_from_arrays
from tickvol.model import TickObservation
from tickvol.simulator import ConstantVol, Poisson, apply_noise, gen_path


@pytest.fixture(scope="module")
def sim():
    path = gen_path(600, ConstantVol(1e-8), seed=11)
    return path, ticks_from_arrays(apply_noise(path, "deterministic"))


def test_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig(mode="nope")
    with pytest.raises(ValueError):
        EstimatorConfig(mode="tv-lambda", sigma0=1e-8)
    with pytest.raises(ValueError):
        EstimatorConfig(mode="const-gamma")
    with pytest.raises(ValueError):
        EstimatorConfig(mode="tv-sages", sigma0=1e-8)


def test_one_row_per_tick_after_first(sim):
    path, ticks = sim
    for cfg in (EstimatorConfig(sigma0=1e-8, n_particles=100),
                EstimatorConfig(mode="tv-lambda", lam=0.01, sigma0=1e-8, n_particles=100),
                EstimatorConfig(mode="benchmark-const"),
                EstimatorConfig(mode="benchmark-tv", lam=0.01, sigma0=1e-8)):
        rows = run(ticks, cfg)
        assert len(rows) == len(ticks) - 1
        assert [r.j for r in rows] == list(range(2, len(ticks) + 1))
    rows = run(ticks, EstimatorConfig(mode="oracle"), truth=path.x)
    assert len(rows) == len(ticks) - 1


def test_reproducible(sim):
    _, ticks = sim
    cfg = EstimatorConfig(sigma0=1e-8, n_particles=100, seed=5)
    a = [r.sigma2[0, 0] for r in run(ticks, cfg)]
    b = [r.sigma2[0, 0] for r in run(ticks, cfg)]
    assert a == b


def test_const_estimate_in_range(sim):
    _, ticks = sim
    rows = run(ticks, EstimatorConfig(sigma0=2e-8, n_particles=300, seed=1))
    assert 0.5e-8 < rows[-1].sigma2[0, 0] < 2e-8
    assert all(0 < r.ess <= 300 + 1e-9 for r in rows)


def test_oracle_needs_full_truth(sim):
    path, ticks = sim
    with pytest.raises(ValueError):
        run(ticks, EstimatorConfig(mode="oracle"))
    with pytest.raises(ValueError, match="shorter"):
        run(ticks, EstimatorConfig(mode="oracle"), truth=path.x[:10])
    rows = run(ticks, EstimatorConfig(mode="oracle"), truth=iter(path.x))
    assert rows[-1].sigma2[0, 0] == pytest.approx(1e-8, rel=0.2)


def test_clock_modes_report_both_scales():
    path = gen_path(400, ConstantVol(2e-8), arrivals=Poisson(2.0), mode="clock", seed=3)
    ticks = ticks_from_arrays(apply_noise(path, "deterministic"))
    rows = run(ticks, EstimatorConfig(mode="clock-alt", sigma0=1e-8, n_particles=100))
    r = rows[-1]
    assert r.sigma2_c is not None and r.sigma2_c[0, 0] > r.sigma2[0, 0]
    rows = run(ticks, EstimatorConfig(mode="clock", sigma0=2e-8, n_particles=100))
    assert rows[-1].sigma2_c is not None


def test_clock_rejects_tied_times():
    ticks = [TickObservation(1.0, 50.0), TickObservation(1.0, 50.01)]
    with pytest.raises(ValueError, match="increasing"):
        run(ticks, EstimatorConfig(mode="clock", sigma0=1e-8, n_particles=50))


def test_bivariate_run():
    p1 = apply_noise(gen_path(200, ConstantVol(1e-8), seed=1), "deterministic")
    p2 = apply_noise(gen_path(200, ConstantVol(4e-8), seed=2), "deterministic")
    groups = list(zip(ticks_from_arrays(p1), ticks_from_arrays(p2)))
    rows = run(groups, EstimatorConfig(sigma0=1e-8, n_particles=100))
    s = rows[-1].sigma2
    assert s.shape == (2, 2)
    np.testing.assert_allclose(s, s.T)
    assert s[1, 1] > s[0, 0]
    with pytest.raises(ValueError):
        run(groups, EstimatorConfig(mode="tv-sages", sigma0=1e-8, lambdas=[0.1, 0.01], kappas=[1, 1]))


def test_cv_select(sim):
    _, ticks = sim
    grid = [0.2, 0.02, 0.002]
    best, crits = cv_select_lambda(ticks, grid, EstimatorConfig(sigma0=1e-8, n_particles=100))
    assert best in grid and len(crits) == 3
    assert crits[grid.index(best)] == min(crits)
    with pytest.raises(ValueError):
        cv_select_lambda(ticks[:50], grid, EstimatorConfig(sigma0=1e-8))
    with pytest.raises(ValueError):
        cv_select_lambda(ticks, [], EstimatorConfig(sigma0=1e-8))


def test_cv_rejects_uninformative():
    levels = (49.0, 50.0)
    ticks = [TickObservation(float(i), 50.0 if i % 2 else 49.0, book_levels=levels) for i in range(120)]
    # two-level books give half-infinite cells; still informative
    cfg = EstimatorConfig(sigma0=1e-8, noise="order_book", n_particles=50)
    cv_select_lambda(ticks, [0.1], cfg)
    one = [TickObservation(float(i), 50.0, book_levels=(50.0,)) for i in range(120)]
    with pytest.raises(ValueError, match="uninformative"):
        cv_select_lambda(one, [0.1], cfg)
