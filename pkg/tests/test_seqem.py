import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tickvol.filter import init_cloud
from tickvol.model import StateMode, support_simple_deterministic
from tickvol.seqem import (ConstantStep, DurationState, FixedStep, VolEstimatorState, alt_clock_estimate,
                           breve_sigma, breve_sigma_clock, cv_criterion, duration_prediction_error,
                           select_duration_lambda, select_grid_min, update, update_constant, update_duration,
                           update_tv)


def cloud_with(increments, weights):
    n = len(weights)
    cloud = init_cloud(support_simple_deterministic(50.0, 0.01), n, seed=0)
    d = np.asarray(increments, dtype=float).reshape(n, -1)
    cloud.history = np.stack([cloud.history[0][:, :1] + d, np.repeat(cloud.history[0][:, :1], d.shape[1], 1)])
    cloud.weights = np.asarray(weights, dtype=float)
    cloud.depth = 2
    return cloud


def test_breve_examples():
    assert breve_sigma(cloud_with([0.0, 0.0], [0.5, 0.5]))[0, 0] == 0.0
    a = 3e-4
    assert breve_sigma(cloud_with([a, -a], [0.5, 0.5]))[0, 0] == pytest.approx(a * a, rel=1e-15)
    c = cloud_with([1e-4, -2e-4, 0.0], [0.2, 0.3, 0.5])
    assert breve_sigma(c)[0, 0] == pytest.approx(1.4e-8, rel=1e-14)
    assert breve_sigma_clock(c, 1, 0.5)[0, 0] == pytest.approx(2.8e-8, rel=1e-14)
    assert breve_sigma_clock(c, 1, 1.0)[0, 0] == breve_sigma(c)[0, 0]
    assert breve_sigma_clock(c, 1, 2.0)[0, 0] == breve_sigma_clock(c, 1, 1.0)[0, 0] / 2
    with pytest.raises(ValueError):
        breve_sigma_clock(c, 1, 0.0)
    with pytest.raises(ValueError):
        breve_sigma(c, 2)


def test_breve_lag_k():
    cloud = init_cloud(support_simple_deterministic(50.0, 0.01), 2, seed=0, k_lag=3)
    x0 = cloud.history[0].copy()
    steps = np.array([[1e-4, 2e-4, -1e-4], [0.0, -1e-4, 3e-4]])  # per particle, per step
    for t in range(3):
        cloud.history[1:] = cloud.history[:-1].copy()
        cloud.history[0] = cloud.history[1] + steps[:, t:t + 1]
    cloud.depth = 4
    cloud.weights = np.array([0.25, 0.75])
    tot = steps.sum(axis=1)
    want = (0.25 * tot[0] ** 2 + 0.75 * tot[1] ** 2) / 3
    assert breve_sigma(cloud, 3)[0, 0] == pytest.approx(want, rel=1e-12)
    assert np.all(cloud.history[3] == x0)


def test_breve_bivariate_psd():
    rng = np.random.default_rng(0)
    d = rng.normal(0, 1e-4, size=(50, 2))
    w = rng.dirichlet(np.ones(50))
    m = breve_sigma(cloud_with(d, w))
    np.testing.assert_allclose(m, (d * w[:, None]).T @ d, rtol=1e-12)
    assert np.array_equal(m, m.T) and np.linalg.eigvalsh(m)[0] >= -1e-24


def test_breve_invariant_to_relabeling():
    rng = np.random.default_rng(1)
    d, w = rng.normal(0, 1e-4, 30), rng.dirichlet(np.ones(30))
    perm = rng.permutation(30)
    a = breve_sigma(cloud_with(d, w))[0, 0]
    b = breve_sigma(cloud_with(d[perm], w[perm]))[0, 0]
    assert a == pytest.approx(b, rel=1e-13)


def test_first_constant_step_takes_breve():
    s = VolEstimatorState.start(5e-8, ConstantStep(0.9, 1.0))
    s = update_constant(s, 2e-8)
    assert s.j == 2 and s.sigma[0, 0] == 2e-8


def test_constant_fixed_point():
    s = VolEstimatorState.start(3e-8, ConstantStep(0.7))
    for _ in range(200):
        s = update_constant(s, 3e-8)
    assert s.sigma[0, 0] == pytest.approx(3e-8, rel=1e-14)


def test_running_mean_identity():
    rng = np.random.default_rng(2)
    b = rng.gamma(2.0, 1e-8, size=2000)
    s = VolEstimatorState.start(1.0, ConstantStep(1.0, 1.0))
    for j, v in enumerate(b, start=1):
        s = update_constant(s, v)
        assert s.sigma[0, 0] == pytest.approx(b[:j].mean(), rel=1e-12)


def test_step_outside_unit_interval():
    with pytest.raises(ValueError):
        update_constant(VolEstimatorState.start(1e-8, ConstantStep(0.9, 2.0)), 1e-8)


def test_tv_midpoint_and_policy_checks():
    s = VolEstimatorState.start(2e-8, FixedStep(0.5))
    assert update_tv(s, 4e-8).sigma[0, 0] == pytest.approx(3e-8)
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            FixedStep(bad)
    with pytest.raises(ValueError):
        ConstantStep(gamma=0.5)
    with pytest.raises(TypeError):
        update_tv(VolEstimatorState.start(1e-8, ConstantStep()), 1e-8)
    with pytest.raises(TypeError):
        update_constant(s, 1e-8)


def test_tv_near_one_tracks_breve():
    s = VolEstimatorState.start(2e-8, FixedStep(1 - 1e-12))
    assert update_tv(s, 4e-8).sigma[0, 0] == pytest.approx(4e-8, rel=1e-9)


@pytest.mark.parametrize("lam", [0.5, 0.01])
def test_closed_form(lam):
    rng = np.random.default_rng(3)
    b = rng.gamma(2.0, 1e-8, size=1000)  # b[0] is the update matrix at j = 2
    s = VolEstimatorState(np.array([[b[0]]]), FixedStep(lam), j=2)
    for v in b[1:]:
        s = update_tv(s, v)
    j = b.size + 1
    closed = sum((1 - lam) ** k * lam * b[j - k - 2] for k in range(j - 2)) + (1 - lam) ** (j - 2) * b[0]
    assert s.sigma[0, 0] == pytest.approx(closed, rel=1e-12)


def test_kernel_equivalence_bound():
    lam, n = 0.01, 1001
    # impulse response of the recursion gives the weight on the k-back update
    weights = np.empty(n)
    for k in range(n):
        s = VolEstimatorState(np.zeros((1, 1)), FixedStep(lam), j=2)
        s = update_tv(s, 1.0)
        for _ in range(k):
            s = update_tv(s, 0.0)
        weights[k] = s.sigma[0, 0]
    k = np.arange(n)
    np.testing.assert_allclose(weights, (1 - lam) ** k * lam, rtol=1e-12)
    delta = 1.0
    b = delta / lam
    kern = (delta / b) * np.exp(-k * delta / b)
    bound = 2 * lam ** 2 * k * (1 - lam) ** np.maximum(k - 1, 0)
    assert np.all(np.abs(weights - kern) <= bound + 1e-18)


@given(st.lists(st.floats(0, 1e-6), min_size=1, max_size=40), st.floats(0.001, 0.999))
def test_tv_stays_in_hull(vals, lam):
    s = VolEstimatorState.start(vals[0], FixedStep(lam))
    for v in vals:
        s = update(s, v)
        assert -1e-30 <= s.sigma[0, 0] <= max(vals) * (1 + 1e-12) + 1e-30


def test_matrix_updates_stay_psd():
    rng = np.random.default_rng(4)
    s = VolEstimatorState.start(np.eye(2) * 1e-8, ConstantStep())
    for _ in range(100):
        d = rng.normal(0, 1e-4, size=(10, 2))
        s = update(s, d.T @ d / 10)
        assert np.allclose(s.sigma, s.sigma.T) and np.linalg.eigvalsh(s.sigma)[0] >= -1e-22


def test_start_validation():
    with pytest.raises(ValueError):
        VolEstimatorState.start(np.array([[1.0, 2.0], [0.0, 1.0]]), ConstantStep())
    with pytest.raises(ValueError):
        VolEstimatorState.start(np.array([[1.0, 2.0], [2.0, 1.0]]), ConstantStep())
    with pytest.raises(ValueError):
        VolEstimatorState.start(1e-8, ConstantStep(), k_lag=0)
    assert VolEstimatorState.start(1e-8, ConstantStep(), mode="clock").mode is StateMode.CLOCK


def test_duration_recursion():
    d = DurationState(0.5)
    d = update_duration(d, 2.0)
    assert d.dbar == 2.0
    assert update_duration(d, 4.0).dbar == 3.0
    c = DurationState(0.3)
    for _ in range(20):
        c = update_duration(c, 0.7)
    assert c.dbar == pytest.approx(0.7, rel=1e-14) and c.intensity == pytest.approx(1 / 0.7)
    with pytest.raises(ValueError):
        update_duration(c, 0.0)
    with pytest.raises(ValueError):
        DurationState(1.0)


def test_alt_clock_estimate():
    assert alt_clock_estimate(1e-8, 2.0) == pytest.approx(5e-9)
    assert alt_clock_estimate(3e-8, 1.0) == 3e-8
    assert alt_clock_estimate(1e-8, 4.0) == alt_clock_estimate(1e-8, 2.0) / 2
    with pytest.raises(ValueError):
        alt_clock_estimate(1e-8, 0.0)


def test_cv_criterion_and_tie_break():
    s = np.array([1.0, 2.0, 3.0])
    b = np.array([9.0, 1.5, 4.0])
    # pairs (1, 1.5) and (2, 4)
    assert cv_criterion(s, b) == pytest.approx(0.25 + 4.0)
    assert select_grid_min([0.3], [5.0]) == 0.3
    assert select_grid_min([0.1, 0.01], [1.0, 1.0]) == 0.01
    assert select_grid_min([0.1, 0.1], [1.0, 1.0]) == 0.1
    with pytest.raises(ValueError):
        select_grid_min([], [])


def test_duration_prediction_error_oracle():
    t = np.cumsum([0.0, 1.0, 3.0, 2.0, 2.0])
    lam = 0.5
    # dbar after 1, 3, 2 is 1, 2, 2; targets are the next gaps 3, 2, 2
    assert duration_prediction_error(t, lam) == pytest.approx((1 - 3) ** 2 + (2 - 2) ** 2 + (2 - 2) ** 2)
    best, crits = select_duration_lambda(t, [0.9, 0.5, 0.1])
    assert best == [0.9, 0.5, 0.1][int(np.argmin(crits))]
    with pytest.raises(ValueError):
        duration_prediction_error([0.0, 1.0, 1.0], 0.5)
