import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covderev.model import stack_observations
from covderev.stft import SpectrogramTensor
from covderev.wiener import apply_filter, filter_observations
from test_model import random_model


def dense_filter(m, obs):
    """Frame-by-frame reference: explicit R_l, dense solve, no shared code paths."""
    n_freq, n_frames, dim = obs.shape
    y = np.zeros((n_freq, n_frames, m.n_mics), dtype=complex)
    for f in range(n_freq):
        for l in range(n_frames):
            r = m.noise_covariance[f].copy()
            for d in range(m.tap_length):
                if l - d >= 0:
                    r = r + m.source_variance[f, l - d] * m.tap_covariances[f, d]
            full = m.source_variance[f, l] * m.tap_covariances[f, 0] @ np.linalg.solve(r, obs[f, l])
            y[f, l] = full[: m.n_mics]
    return y


def random_obs(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.mark.parametrize("n_mics,tap_length,stack_length", [(1, 1, 1), (2, 6, 1), (2, 6, 6), (2, 1, 6), (3, 2, 2)])
def test_matches_dense_solve(n_mics, tap_length, stack_length):
    rng = np.random.default_rng(n_mics * 10 + tap_length + stack_length)
    m = random_model(rng, 3, 12, n_mics, tap_length, stack_length)
    obs = random_obs(rng, (3, 12, m.dim))
    np.testing.assert_allclose(filter_observations(m, obs), dense_filter(m, obs), rtol=1e-10, atol=1e-10)


def test_passthrough_without_reverberation_or_noise():
    rng = np.random.default_rng(0)
    m = random_model(rng, 4, 10, 2, 3, 1)
    m.tap_covariances[:, 1:] = 0.0
    m.noise_covariance = 1e-12 * np.broadcast_to(np.eye(2), (4, 2, 2)).copy()
    obs = random_obs(rng, (4, 10, 2))
    np.testing.assert_allclose(filter_observations(m, obs), obs, atol=1e-9)


def test_zero_variance_gives_zero_output():
    rng = np.random.default_rng(1)
    m = random_model(rng, 2, 7, 2, 6, 6)
    m.source_variance[:] = 0.0
    obs = random_obs(rng, (2, 7, m.dim))
    assert np.all(filter_observations(m, obs) == 0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_linear_in_observations(seed, a, b):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 2, 6, 2, 2, 2)
    x1, x2 = random_obs(rng, (2, 6, 4)), random_obs(rng, (2, 6, 4))
    lhs = filter_observations(m, a * x1 + b * x2)
    rhs = a * filter_observations(m, x1) + b * filter_observations(m, x2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_single_channel_gain_is_contractive(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 3, 9, 1, 4, 1)
    obs = random_obs(rng, (3, 9, 1))
    y = filter_observations(m, obs)
    assert np.all(np.abs(y) <= np.abs(obs) * (1 + 1e-12))


def test_geometry_mismatch():
    rng = np.random.default_rng(2)
    m = random_model(rng, 2, 5, 2, 2, 2)
    with pytest.raises(ValueError):
        filter_observations(m, random_obs(rng, (2, 5, 2)))
    with pytest.raises(ValueError):
        filter_observations(m, random_obs(rng, (2, 6, 4)))
    s = SpectrogramTensor(random_obs(rng, (5, 3, 2)), 4, 2, 8)
    with pytest.raises(ValueError):
        apply_filter(m, s)


def test_apply_filter_is_chunk_invariant():
    rng = np.random.default_rng(3)
    n_frames, n_bins = 8, 5
    m = random_model(rng, n_bins, n_frames, 2, 2, 2)
    s = SpectrogramTensor(random_obs(rng, (n_frames, n_bins, 2)), 8, 4, 28)
    a = apply_filter(m, s, chunk_size=2).coefficients
    b = apply_filter(m, s, chunk_size=32).coefficients
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)
    obs = stack_observations(s.coefficients, 2)
    np.testing.assert_allclose(a, np.transpose(dense_filter(m, obs), (1, 0, 2)), atol=1e-10)
