"""Noise schedule and forward process against high-precision oracles."""

import numpy as np
import pytest
from mpmath import mp, mpf

from deskbot.errors import BadRange, BadTimestep
from deskbot.policy import NoiseSchedule, forward_noise, make_schedule


def alpha_bars_oracle(T, beta_min, beta_max, dps=50):
    """Running alpha product at 50 decimal digits, betas spaced like linspace."""
    mp.dps = dps
    lo, hi = mpf(beta_min), mpf(beta_max)
    out, acc = [], mpf(1)
    for i in range(T):
        beta = lo if T == 1 else lo + (hi - lo) * i / (T - 1)
        acc *= 1 - beta
        out.append(acc)
    return out


def test_default_schedule_matches_oracle():
    sch = make_schedule()
    assert sch.T == 100 and sch.beta_min == 1e-4 and sch.beta_max == 0.02
    oracle = alpha_bars_oracle(100, 1e-4, 0.02)
    for got, want in zip(sch.alpha_bars, oracle):
        assert abs(got - float(want)) <= 1e-12


def test_schedule_arrays_consistent():
    sch = make_schedule(T=37, beta_min=0.002, beta_max=0.3)
    assert sch.betas.shape == (37,)
    assert np.allclose(sch.alphas, 1.0 - sch.betas)
    assert sch.betas[0] == 0.002 and sch.betas[-1] == 0.3
    assert np.all(np.diff(sch.betas) > 0)


def test_single_step_schedule():
    sch = make_schedule(T=1, beta_min=0.5, beta_max=0.9)
    assert sch.betas.tolist() == [0.5]
    assert sch.alpha_bars.tolist() == [0.5]


def test_random_schedules_monotone_and_in_range():
    rng = np.random.default_rng(0)
    for _ in range(100):
        T = int(rng.integers(1, 500))
        beta_min = float(rng.uniform(1e-5, 0.01))
        beta_max = float(rng.uniform(beta_min, 0.5))
        sch = make_schedule(T, beta_min, beta_max)
        ab = sch.alpha_bars
        assert np.all(ab > 0.0) and np.all(ab < 1.0)
        assert np.all(np.diff(ab) < 0.0) or T == 1


@pytest.mark.parametrize("T,lo,hi", [
    (0, 1e-4, 0.02), (-3, 1e-4, 0.02),
    (10, 0.0, 0.02), (10, -0.1, 0.02),
    (10, 0.03, 0.02), (10, 1e-4, 1.0), (10, 1e-4, 1.5),
])
def test_bad_schedule_params(T, lo, hi):
    with pytest.raises(BadRange):
        make_schedule(T, lo, hi)


def test_forward_noise_hand_value():
    # abar = 0.25: x_t = 0.5 * 1 + sqrt(0.75) * 1
    sch = NoiseSchedule(T=1, beta_min=0.75, beta_max=0.75,
                        betas=np.array([0.75]), alphas=np.array([0.25]),
                        alpha_bars=np.array([0.25]))
    x = forward_noise(sch, np.array([[1.0]]), np.array([0]), np.array([[1.0]]))
    assert x[0, 0] == pytest.approx(0.5 + np.sqrt(0.75), abs=1e-12)


def test_forward_noise_zero_eps_scales_x0():
    sch = make_schedule(T=50)
    x0 = np.ones((3, 4))
    t = np.array([0, 10, 49])
    xt = forward_noise(sch, x0, t, np.zeros_like(x0))
    for row, ti in zip(xt, t):
        assert np.allclose(row, np.sqrt(sch.alpha_bars[ti]))


def test_forward_noise_t0_nearly_clean():
    sch = make_schedule()
    x0 = np.array([[2.0, -1.0]])
    eps = np.array([[0.3, 0.3]])
    xt = forward_noise(sch, x0, np.array([0]), eps)
    want = np.sqrt(1 - 1e-4) * x0 + np.sqrt(1e-4) * eps
    assert np.allclose(xt, want, atol=1e-15)


def test_forward_noise_scalar_t():
    sch = make_schedule(T=10)
    out = forward_noise(sch, np.ones((1, 2)), 3, np.zeros((1, 2)))
    assert out.shape == (1, 2)


def test_forward_noise_bad_timesteps():
    sch = make_schedule(T=10)
    x = np.zeros((1, 2))
    for t in (-1, 10, 99):
        with pytest.raises(BadTimestep):
            forward_noise(sch, x, np.array([t]), x)


def test_forward_noise_statistics():
    # marginal of x_t under unit-normal eps: mean sqrt(ab)*x0, var 1-ab
    sch = make_schedule()
    t = 60
    rng = np.random.default_rng(3)
    eps = rng.standard_normal((200000, 1))
    xt = forward_noise(sch, np.full((200000, 1), 0.7), np.full(200000, t), eps)
    ab = sch.alpha_bars[t]
    assert xt.mean() == pytest.approx(np.sqrt(ab) * 0.7, abs=5e-3)
    assert xt.var() == pytest.approx(1 - ab, abs=5e-3)


def test_as_config_roundtrip():
    sch = make_schedule(T=17, beta_min=0.001, beta_max=0.1)
    cfg = sch.as_config()
    assert cfg == {"T": 17, "beta_min": 0.001, "beta_max": 0.1}
    again = make_schedule(**cfg)
    assert np.array_equal(again.alpha_bars, sch.alpha_bars)
