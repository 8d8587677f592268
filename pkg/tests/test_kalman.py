import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chillerkit.errors import ConfigError, EmptyInputError
from chillerkit.kalman import KalmanConfig, KalmanState, kf_filter_series, kf_gain, kf_run, kf_step
from conftest import day_series

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def oracle_filter(z, a=1.0, h=1.0, q=1.0, r=1.0, x0=None, p0=1.0):
    """Plain-Python scalar recursion."""
    x = z[0] if x0 is None else x0
    p = p0
    out = []
    for zk in z:
        xp = a * x
        pp = a * p * a + q
        k = pp * h / (h * pp * h + r)
        x = xp + k * (zk - h * xp)
        p = (1 - k * h) * pp
        out.append(x)
    return out


def test_step_hand_example():
    s = kf_step(KalmanState(0.0, 1.0), 10.0, KalmanConfig())
    assert kf_gain(KalmanState(0.0, 1.0), KalmanConfig()) == pytest.approx(2 / 3, abs=1e-15)
    assert s.x_hat == pytest.approx(6.666666666666667, abs=1e-12)
    assert s.p == pytest.approx(2 / 3, abs=1e-15)


def test_zero_innovation_keeps_prior():
    cfg = KalmanConfig(a=0.9)
    st_ = KalmanState(100.0, 2.0)
    assert kf_step(st_, cfg.h * cfg.a * 100.0, cfg).x_hat == pytest.approx(90.0, abs=1e-12)


def test_huge_measurement_noise_ignores_data():
    xs, _, _ = kf_run(np.full(100, 50.0), KalmanConfig(r=1e12, x0=0.0))
    assert np.all(xs < 0.01)


def test_riccati_fixed_point():
    _, ps, ks = kf_run(np.zeros(50), KalmanConfig(x0=0.0))
    assert abs(ps[49] - GOLDEN) < 1e-9
    assert abs(ks[49] - GOLDEN) < 1e-9


def test_constant_series_is_unchanged():
    s = day_series(np.full(48, 1234.5))
    out = kf_filter_series(s)
    assert np.array_equal(out.values, s.values)
    assert out.provenance == "kalman-filtered"
    assert np.array_equal(out.timestamps, s.timestamps)


def test_step_response_monotone_without_overshoot():
    z = [100.0] * 10 + [200.0] * 20
    xs, _, _ = kf_run(z)
    assert xs == pytest.approx(oracle_filter(z), abs=1e-9)
    tail = xs[9:]
    assert np.all(np.diff(tail) >= 0)
    assert tail.max() <= 200.0 + 1e-9


def test_cut_in_dip_is_attenuated():
    z = np.full(20, 1000.0)
    z[10] = 600.0
    xs, _, _ = kf_run(z)
    assert xs == pytest.approx(oracle_filter(list(z)), abs=1e-9)
    assert 1000.0 - xs.min() < 1000.0 - z.min()


def test_matches_oracle_on_noise():
    rng = np.random.default_rng(0)
    z = 1500 + 100 * rng.standard_normal(200)
    cfg = KalmanConfig(a=0.98, h=1.1, q=3.0, r=7.0, x0=1400.0, p0=5.0)
    xs, _, _ = kf_run(z, cfg)
    assert xs == pytest.approx(oracle_filter(list(z), 0.98, 1.1, 3.0, 7.0, 1400.0, 5.0), rel=1e-12)


@given(st.floats(0, 10), st.floats(1e-3, 10), st.floats(0, 10))
def test_update_reduces_variance(q, r, p):
    cfg = KalmanConfig(q=q, r=r)
    k = kf_gain(KalmanState(0.0, p), cfg)
    prior = p + q
    post = kf_step(KalmanState(0.0, p), 1.0, cfg).p
    if k > 1e-12:  # smaller gains vanish in 1 - k at double precision
        assert post < prior


@given(st.lists(st.floats(-1e3, 1e4), min_size=1, max_size=60), st.floats(-1e4, 1e4))
def test_shift_equivariance(z, c):
    z = np.asarray(z)
    xs, _, _ = kf_run(z, KalmanConfig(x0=float(z[0])))
    xs_c, _, _ = kf_run(z + c, KalmanConfig(x0=float(z[0]) + c))
    np.testing.assert_allclose(xs_c, xs + c, rtol=0, atol=1e-9 * (1 + np.abs(z).max() + abs(c)))


def test_shift_equivariance_exact_on_dyadic_values():
    z = np.array([1024.0, 1536.0, 768.0, 2048.0])
    xs, _, _ = kf_run(z, KalmanConfig(x0=1024.0))
    xs_c, _, _ = kf_run(z + 256.0, KalmanConfig(x0=1280.0))
    assert np.array_equal(xs_c, xs + 256.0)


def test_repeat_runs_bit_identical():
    z = np.random.default_rng(1).standard_normal(500)
    a = kf_run(z)
    b = kf_run(z)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))


def test_errors():
    with pytest.raises(EmptyInputError):
        kf_run([])
    with pytest.raises(ConfigError):
        KalmanConfig(r=0.0)
    with pytest.raises(ConfigError):
        KalmanConfig(q=-1.0)
