import math

import numpy as np
import pytest
import torch

from tokenfold.domain.diffusion import (
    MAX_BETA,
    NoiseSchedule,
    forward_noise_frames,
    forward_noise_latent,
    forward_noise_translation,
    make_schedule,
    q_sample,
    so3_sigma,
)
from tokenfold.domain.exceptions import ConfigError, ShapeMismatch
from tokenfold.domain.geometry import frames_from_atoms
from tokenfold.domain.igso3 import build_igso3_table, default_sigma_grid
from tokenfold.domain.services.verify import random_backbone


@pytest.mark.parametrize("kind", ["linear", "cosine"])
def test_schedule_shape(kind):
    sched = make_schedule(200, kind)
    assert sched.beta.shape == (200,)
    assert np.all(np.diff(sched.alpha_bar) < 0)
    assert sched.alpha_bar[0] > 0.99
    assert sched.alpha_bar[-1] < 0.05
    np.testing.assert_allclose(sched.alpha_bar, np.cumprod(1 - sched.beta), rtol=0, atol=1e-12)


def test_cosine_matches_closed_form():
    T, s = 100, 0.008
    sched = make_schedule(T, "cosine")
    f = [math.cos(((i / T) + s) / (1 + s) * math.pi / 2) ** 2 for i in range(T + 1)]
    closed = np.array(f[1:]) / f[0]
    np.testing.assert_allclose(sched.alpha_bar[:-1], closed[:-1], rtol=0, atol=1e-12)
    # final beta is clipped to MAX_BETA instead of reaching 1
    assert sched.beta[-1] == MAX_BETA
    assert sched.alpha_bar[-1] == pytest.approx(sched.alpha_bar[-2] * (1 - MAX_BETA), rel=1e-12)
    assert 0 < sched.alpha_bar[-1] < 1e-6


def test_schedule_rejects_bad_inputs():
    with pytest.raises(ConfigError):
        make_schedule(1)
    with pytest.raises(ConfigError):
        make_schedule(50, "sigmoid")


def test_schedule_validates_arrays():
    with pytest.raises(ConfigError):
        NoiseSchedule(T=3, beta=np.array([0.1, 0.2, 1.5]), alpha_bar=np.ones(3))


def test_posterior_variance_starts_at_zero():
    sched = make_schedule(50)
    assert sched.posterior_variance[0] == 0.0
    assert np.all(sched.posterior_variance[1:] > 0)


def test_forward_moments(rng):
    sched = make_schedule(100)
    t = 60
    ab = sched.alpha_bar[t]
    x0 = np.full((40000, 3), 2.0)
    xt = forward_noise_latent(x0, t, rng.standard_normal(x0.shape), sched)
    np.testing.assert_allclose(xt.mean(axis=0), np.sqrt(ab) * 2.0, atol=5 * np.sqrt((1 - ab) / 40000))
    np.testing.assert_allclose(xt.var(axis=0), 1 - ab, rtol=0.05)


def test_forward_noise_accepts_tensors():
    sched = make_schedule(20)
    x0 = torch.ones(4, 8, dtype=torch.float64)
    out = forward_noise_latent(x0, 5, torch.zeros_like(x0), sched)
    assert isinstance(out, torch.Tensor)
    torch.testing.assert_close(out, x0 * float(np.sqrt(sched.alpha_bar[5])))


def test_q_sample_limits_and_shapes():
    x0, eps = np.ones(3), np.full(3, 2.0)
    np.testing.assert_array_equal(q_sample(x0, eps, 1.0), x0)
    np.testing.assert_array_equal(q_sample(x0, eps, 0.0), eps)
    with pytest.raises(ShapeMismatch):
        q_sample(np.ones(3), np.ones(4), 0.5)


def test_step_out_of_range():
    sched = make_schedule(20)
    with pytest.raises(ConfigError):
        forward_noise_latent(np.zeros(2), 20, np.zeros(2), sched)


def test_translation_needs_three_axis():
    sched = make_schedule(20)
    with pytest.raises(ShapeMismatch):
        forward_noise_translation(np.zeros((4, 2)), 3, sched, np.zeros((4, 2)))


@pytest.mark.parametrize("kind", ["sqrt_one_minus_alpha_bar", "linear"])
def test_so3_sigma_is_monotone(kind):
    sched = make_schedule(50)
    sigmas = [so3_sigma(sched, t, kind) for t in range(50)]
    assert np.all(np.diff(sigmas) > 0)


def test_forward_noise_frames(rng):
    sched = make_schedule(50)
    table = build_igso3_table(default_sigma_grid(8), 512)
    frames = frames_from_atoms(random_backbone(rng, 12))
    noisy = forward_noise_frames(frames, 40, sched, table, rng)
    assert len(noisy) == 12
    eye = np.broadcast_to(np.eye(3), noisy.rots.shape)
    np.testing.assert_allclose(np.einsum("lji,ljk->lik", noisy.rots, noisy.rots), eye, atol=1e-9)
    assert not np.allclose(noisy.trans, frames.trans)
