import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gak.errors import InvalidInputError
from gak.schedule import ddim_sigma, ddim_step, make_schedule, predict_eps, q_sample

SCHED = make_schedule()


def test_defaults():
    assert SCHED.T == 1000
    assert SCHED.beta[0] == 1e-4 and SCHED.beta[-1] == pytest.approx(0.02)
    assert SCHED.alpha_bar[0] == 1.0


def test_single_step_schedule():
    s = make_schedule(1, 0.1, 0.1)
    assert s.abar(1) == pytest.approx(0.9)


def test_abar_is_running_product():
    prod = 1.0
    for t in range(1, 1001):
        prod *= 1 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 999)
        if t in (1, 10, 250, 500, 999, 1000):
            assert SCHED.abar(t) == pytest.approx(prod, rel=1e-12)


def test_abar_monotone_and_bounded():
    ab = SCHED.alpha_bar
    assert np.all(np.diff(ab) < 0) and ab[-1] > 0
    assert SCHED.abar(1000) == pytest.approx(4.04e-5, rel=0.02)


@pytest.mark.parametrize("args", [(0,), (10, 0.0, 0.1), (10, 0.2, 0.1), (10, 0.1, 1.0)])
def test_bad_schedule(args):
    with pytest.raises(InvalidInputError):
        make_schedule(*args)


def test_abar_range():
    with pytest.raises(InvalidInputError):
        SCHED.abar(1001)


def test_q_sample_t0_is_identity(rng):
    x0 = rng.random((2, 4, 4, 3))
    np.testing.assert_array_equal(q_sample(x0, 0, rng.normal(size=x0.shape), SCHED), x0)


def test_q_sample_statistics():
    rng = np.random.default_rng(0)
    x0 = np.full(200_000, 0.7)
    xt = q_sample(x0, 500, rng.normal(size=x0.shape), SCHED)
    ab = SCHED.abar(500)
    assert xt.mean() == pytest.approx(math.sqrt(ab) * 0.7, abs=5e-3)
    assert xt.var() == pytest.approx(1 - ab, rel=1e-2)


def test_q_sample_shape_mismatch():
    with pytest.raises(InvalidInputError):
        q_sample(np.zeros(4), 3, np.zeros(5), SCHED)


@given(st.integers(1, 1000), st.integers(0, 2 ** 31))
def test_predict_eps_inverts_q_sample(t, seed):
    rng = np.random.default_rng(seed)
    x0, eps = rng.random(16), rng.normal(size=16)
    np.testing.assert_allclose(predict_eps(q_sample(x0, t, eps, SCHED), x0, t, SCHED), eps, atol=1e-6)


def test_predict_eps_needs_noise():
    with pytest.raises(InvalidInputError):
        predict_eps(np.zeros(3), np.zeros(3), 0, SCHED)


def test_ddim_scalar_example():
    # hand-computed for x_t = 1, x0_hat = 0.5, t = 500 -> 450, deterministic
    ab, abp = SCHED.abar(500), SCHED.abar(450)
    eps_hat = (1 - math.sqrt(ab) * 0.5) / math.sqrt(1 - ab)
    ref = math.sqrt(abp) * 0.5 + math.sqrt(1 - abp) * eps_hat
    got = ddim_step(np.array(1.0), np.array(0.5), 500, 450, 0.0, None, SCHED)
    assert float(got) == pytest.approx(ref, abs=1e-12)
    assert 1.0 < ref < 1.1


def test_ddim_to_zero_returns_prediction(rng):
    x0 = rng.random(10)
    np.testing.assert_allclose(ddim_step(rng.normal(size=10), x0, 50, 0, 0.0, None, SCHED), x0, atol=1e-12)


@given(st.integers(2, 1000), st.integers(0, 2 ** 31), st.data())
def test_deterministic_step_with_exact_prediction_stays_on_trajectory(t, seed, data):
    """With the true x0, an eta=0 step lands exactly on q_sample(x0, t_prev, eps)."""
    t_prev = data.draw(st.integers(0, t - 1))
    rng = np.random.default_rng(seed)
    x0, eps = rng.random(8), rng.normal(size=8)
    out = ddim_step(q_sample(x0, t, eps, SCHED), x0, t, t_prev, 0.0, None, SCHED)
    np.testing.assert_allclose(out, q_sample(x0, t_prev, eps, SCHED), atol=1e-8)


def test_chain_of_steps_telescopes(rng):
    x0, eps = rng.random(8), rng.normal(size=8)
    x = q_sample(x0, 1000, eps, SCHED)
    for t, tp in zip(range(1000, 0, -100), range(900, -1, -100)):
        x = ddim_step(x, x0, t, tp, 0.0, None, SCHED)
    np.testing.assert_allclose(x, x0, atol=1e-9)


def test_sigma_bounds():
    assert ddim_sigma(500, 450, SCHED, 0.0) == 0.0
    s = ddim_sigma(500, 450, SCHED, 1.0)
    assert 0 < s ** 2 <= 1 - SCHED.abar(450)


def test_stochastic_step_adds_scaled_noise(rng):
    xt, x0, z = rng.normal(size=5), rng.random(5), rng.normal(size=5)
    s = ddim_sigma(500, 450, SCHED, 1.0)
    det = ddim_step(xt, x0, 500, 450, 0.0, None, SCHED)
    sto = ddim_step(xt, x0, 500, 450, s, z, SCHED)
    eps_hat = predict_eps(xt, x0, 500, SCHED)
    c_det, c_sto = math.sqrt(1 - SCHED.abar(450)), math.sqrt(1 - SCHED.abar(450) - s * s)
    np.testing.assert_allclose(sto - det, (c_sto - c_det) * eps_hat + s * z, atol=1e-12)


def test_sigma_too_large():
    with pytest.raises(InvalidInputError):
        ddim_step(np.zeros(2), np.zeros(2), 500, 450, 1.0, np.zeros(2), SCHED)


@pytest.mark.parametrize("t,tp", [(450, 500), (500, 500), (1001, 0), (10, -1)])
def test_bad_step_order(t, tp):
    with pytest.raises(InvalidInputError):
        ddim_step(np.zeros(2), np.zeros(2), t, tp, 0.0, None, SCHED)
