"""
Noise schedules and forward noising.
"""

import logging
import math
from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from .exceptions import ConfigError, ShapeMismatch
from .geometry import BackboneFrames
from .igso3 import IGSO3Table, igso3_sample_batch

logger = logging.getLogger(__name__)

COSINE_OFFSET = 0.008
MAX_BETA = 0.999
MAX_FIRST_BETA = 5e-3


class ScheduleKind(StrEnum):
    LINEAR = "linear"
    COSINE = "cosine"


class SigmaKind(StrEnum):
    SQRT_ONE_MINUS_ALPHA_BAR = "sqrt_one_minus_alpha_bar"
    LINEAR = "linear"


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        alpha_bar = np.asarray(self.alpha_bar, dtype=np.float64)
        if self.T < 2 or beta.shape != (self.T,) or alpha_bar.shape != (self.T,):
            raise ConfigError(f"Schedule needs T >= 2 and length-T arrays, got T={self.T}.")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise ConfigError("Schedule betas must lie in (0, 1).")
        if np.abs(alpha_bar - np.cumprod(1.0 - beta)).max() > 1e-12:
            raise ConfigError("alpha_bar is not the running product of (1 - beta).")
        if np.any(np.diff(alpha_bar) >= 0):
            raise ConfigError("alpha_bar must be strictly decreasing.")
        if alpha_bar[0] <= 0.99:
            raise ConfigError(f"alpha_bar[0] = {alpha_bar[0]:.4f} must exceed 0.99.")
        beta.flags.writeable = False
        alpha_bar.flags.writeable = False
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha_bar", alpha_bar)

    @property
    def alpha(self) -> np.ndarray:
        return 1.0 - self.beta

    @property
    def alpha_bar_prev(self) -> np.ndarray:
        return np.concatenate([[1.0], self.alpha_bar[:-1]])

    @property
    def posterior_variance(self) -> np.ndarray:
        """β̃_t = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t); zero at t = 0."""
        return self.beta * (1.0 - self.alpha_bar_prev) / (1.0 - self.alpha_bar)

    def check_step(self, t: int):
        if not 0 <= t < self.T:
            raise ConfigError(f"Step {t} outside [0, {self.T}).")


def cosine_alpha_bar(T: int, s: float = COSINE_OFFSET) -> np.ndarray:
    """Closed-form ᾱ for steps 1..T, before any β clipping."""
    steps = np.arange(T + 1, dtype=np.float64)
    f = np.cos((steps / T + s) / (1 + s) * math.pi / 2) ** 2
    return f[1:] / f[0]


def make_schedule(T: int, kind: str = ScheduleKind.COSINE) -> NoiseSchedule:
    if T < 2:
        raise ConfigError(f"Schedule needs T >= 2, got {T}.")
    try:
        kind = ScheduleKind(kind)
    except ValueError:
        raise ConfigError(f"Unknown schedule kind '{kind}'.")

    if kind is ScheduleKind.LINEAR:
        scale = 1000.0 / T
        start = min(scale * 1e-4, MAX_FIRST_BETA)
        end = min(scale * 0.02, MAX_BETA)
        beta = np.linspace(start, end, T, dtype=np.float64)
    else:
        ab = cosine_alpha_bar(T)
        beta = 1.0 - ab / np.concatenate([[1.0], ab[:-1]])
        beta = np.clip(beta, 1e-12, MAX_BETA)
        beta[0] = min(beta[0], MAX_FIRST_BETA)

    return NoiseSchedule(T=T, beta=beta, alpha_bar=np.cumprod(1.0 - beta))


def q_sample(x0, eps, alpha_bar: float):
    """√ᾱ·x0 + √(1−ᾱ)·eps; works for numpy arrays and torch tensors alike."""
    if tuple(x0.shape) != tuple(eps.shape):
        raise ShapeMismatch(f"x0 {tuple(x0.shape)} and noise {tuple(eps.shape)} differ.")
    if alpha_bar == 1.0:
        return x0 * 1.0
    if alpha_bar == 0.0:
        return eps * 1.0
    return math.sqrt(alpha_bar) * x0 + math.sqrt(1.0 - alpha_bar) * eps


def forward_noise_latent(x0, t: int, eps, sched: NoiseSchedule):
    sched.check_step(t)
    return q_sample(x0, eps, float(sched.alpha_bar[t]))


def forward_noise_translation(t0, t: int, sched: NoiseSchedule, noise):
    t0 = np.asarray(t0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if t0.shape[-1:] != (3,):
        raise ShapeMismatch(f"Translations must end in a 3-axis, got {t0.shape}.")
    sched.check_step(t)
    return q_sample(t0, noise, float(sched.alpha_bar[t]))


def so3_sigma(
    sched: NoiseSchedule,
    t: int,
    kind: str = SigmaKind.SQRT_ONE_MINUS_ALPHA_BAR,
    sigma_min: float = 0.1,
    sigma_max: float = 1.5,
) -> float:
    """Rotation noise scale for step t; monotone in t for every kind."""
    sched.check_step(t)
    try:
        kind = SigmaKind(kind)
    except ValueError:
        raise ConfigError(f"Unknown sigma kind '{kind}'.")
    if kind is SigmaKind.LINEAR:
        return sigma_min + (sigma_max - sigma_min) * t / (sched.T - 1)
    return math.sqrt(1.0 - float(sched.alpha_bar[t]))


def forward_noise_frames(frames: BackboneFrames, t: int, sched: NoiseSchedule, table: IGSO3Table,
                         rng: np.random.Generator, sigma_kind: str = SigmaKind.SQRT_ONE_MINUS_ALPHA_BAR):
    """
    Noise translations with the variance-preserving Gaussian and rotations with
    IGSO(3): ``R_t = R_0 · R_noise``. The noise scale is clipped into the table's
    σ range.
    """
    L = len(frames)
    trans = forward_noise_translation(frames.trans, t, sched, rng.standard_normal((L, 3)))
    sigma = so3_sigma(sched, t, sigma_kind)
    lo, hi = float(table.sigma_grid[0]), float(table.sigma_grid[-1])
    if not lo <= sigma <= hi:
        logger.debug(f"Clipping rotation sigma {sigma:.4f} into [{lo}, {hi}]")
        sigma = min(max(sigma, lo), hi)
    noise = igso3_sample_batch(sigma, table, rng, L)
    rots = np.einsum("lij,ljk->lik", frames.rots, noise)
    return BackboneFrames(rots, trans)
