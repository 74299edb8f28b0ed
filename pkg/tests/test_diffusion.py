import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from humansynth import diffusion as df


@pytest.fixture
def sched():
    return df.cosine_schedule(40)


def grids(seed, shape=(4, 8, 8)):
    rng = np.random.default_rng(seed)
    return rng.normal(size=shape), rng.normal(size=shape)


def test_schedule_endpoints_exact(sched):
    assert sched[0] == 1.0 and sched[sched.T] == 0.0
    assert sched.T == df.DEFAULT_STEPS == 40
    assert np.all(np.diff(sched.alpha_bar) < 0)


def test_noising_endpoints_exact(sched):
    y, eps = grids(0)
    assert np.array_equal(df.forward_noise(y, eps, 0, sched), y)
    assert np.array_equal(df.forward_noise(y, eps, sched.T, sched), eps)


def test_blend_endpoints_exact(sched):
    n, x = grids(1)
    assert np.array_equal(df.blend(n, x, 0, sched), n)
    assert np.array_equal(df.blend(n, x, sched.T, sched), x)


def test_intermediate_step_matches_formula(sched):
    y, eps = grids(2)
    t = 17
    a = sched.alpha_bar[t]
    np.testing.assert_allclose(df.forward_noise(y, eps, t, sched),
                               np.sqrt(a) * y + np.sqrt(1 - a) * eps, rtol=0, atol=1e-15)


def test_v_target_and_inverse(sched):
    y, eps = grids(3)
    for t in (0, 1, 20, 39, 40):
        yt = df.forward_noise(y, eps, t, sched)
        v = df.v_target(y, eps, t, sched)
        np.testing.assert_allclose(df.clean_from_v(yt, v, t, sched), y, atol=1e-12)
    # at t = 0 the target is the noise itself, at t = T it is minus the clean grid
    np.testing.assert_array_equal(df.v_target(y, eps, 0, sched), eps)
    np.testing.assert_array_equal(df.v_target(y, eps, sched.T, sched), -y)


@pytest.mark.parametrize("prediction", ["clean", "v"])
def test_oracle_ddim_sweep_recovers_target(sched, prediction):
    target, start = grids(4, (3, 16, 16))
    trace = []

    def oracle(current, t):
        trace.append(t)
        if prediction == "clean":
            return target
        a = sched[t]
        # infer the noise the oracle would see, then give its exact v
        eps = start if t == sched.T else (current - math.sqrt(a) * target) / math.sqrt(1 - a)
        return df.v_target(target, eps, t, sched)

    out = df.ddim_sample(start, oracle, sched, steps=40, prediction=prediction)
    np.testing.assert_allclose(out, target, atol=1e-9, rtol=0)
    assert trace == list(range(40, 0, -1))


def test_ddim_step_identities(sched):
    y, eps = grids(5)
    xt = df.forward_noise(y, eps, 30, sched)
    # with the true clean grid the step lands exactly on the same trajectory
    np.testing.assert_allclose(df.ddim_step(xt, y, 30, 12, sched),
                               df.forward_noise(y, eps, 12, sched), atol=1e-12)
    np.testing.assert_array_equal(df.ddim_step(xt, y, 30, 30, sched), xt)
    with pytest.raises(ValueError):
        df.ddim_step(xt, y, 10, 20, sched)


def test_timesteps():
    s = df.cosine_schedule(40)
    assert df.timesteps(s) == list(range(40, -1, -1))
    ts = df.timesteps(s, 7)
    assert ts[0] == 40 and ts[-1] == 0 and len(ts) == 8
    assert all(a > b for a, b in zip(ts, ts[1:]))
    assert df.timesteps(s, 100) == list(range(40, -1, -1))
    with pytest.raises(ValueError):
        df.timesteps(s, 0)


def test_errors(sched):
    y, eps = grids(6)
    with pytest.raises(ValueError):
        df.forward_noise(y, eps[:2], 3, sched)
    with pytest.raises(ValueError):
        df.forward_noise(y, eps, 41, sched)
    with pytest.raises(ValueError):
        df.NoiseSchedule(np.array([0.9, 0.5]))
    with pytest.raises(ValueError):
        df.NoiseSchedule(np.array([1.0, 0.5, 0.5]))
    with pytest.raises(ValueError):
        df.NoiseSchedule(np.array([1.0]))


def test_schedule_round_trip(sched):
    back = df.NoiseSchedule.from_dict(sched.to_dict())
    np.testing.assert_array_equal(back.alpha_bar, sched.alpha_bar)
    lin = df.linear_schedule(10)
    assert lin[0] == 1.0 and lin[10] == 0.0


@settings(max_examples=40)
@given(st.integers(1, 40), st.integers(0, 2 ** 31 - 1))
def test_variance_preserving(t, seed):
    """For independent unit-variance inputs the noised grid keeps unit variance."""
    sched = df.cosine_schedule(40)
    a = sched[t]
    assert math.isclose(math.sqrt(a) ** 2 + math.sqrt(1 - a) ** 2, 1.0, rel_tol=1e-12)
    y, eps = grids(seed, (2, 2))
    yt = df.forward_noise(y, eps, t, sched)
    assert np.all(np.isfinite(yt))
