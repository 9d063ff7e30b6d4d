"""
Isotropic Gaussian on SO(3): truncated heat-kernel series, tabulated inverse CDF
of the rotation angle, and sampling.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.spatial.transform import Rotation as ScipyRotation

from .exceptions import ConfigError
from .geometry import Rotation, axis_angle

logger = logging.getLogger(__name__)

SMALL_OMEGA = 1e-6
OMEGA_FLOOR = 1e-9
TAIL_TOL = 1e-12
MIN_L_MAX = 10
MAX_L_MAX = 5000
DEFAULT_OMEGA_RESOLUTION = 4096


def igso3_density(omega, sigma: float, l_max: int):
    """
    Σ_{l≤l_max} (2l+1) e^{−l(l+1)σ²} sin((l+½)ω) / sin(ω/2), density of the
    rotation angle with respect to the uniform measure on SO(3).
    """
    omega_arr = np.atleast_1d(np.asarray(omega, dtype=np.float64))
    ls = np.arange(l_max + 1, dtype=np.float64)
    coeff = (2 * ls + 1) * np.exp(-ls * (ls + 1) * sigma**2)

    out = np.empty_like(omega_arr)
    small = omega_arr < SMALL_OMEGA
    if np.any(small):
        out[small] = np.sum((2 * ls + 1) * coeff)
    big = ~small
    if np.any(big):
        w = omega_arr[big][:, None]
        out[big] = np.sum(coeff * np.sin((ls + 0.5) * w) / np.sin(w / 2), axis=1)

    if np.ndim(omega) == 0:
        return float(out[0])
    return out


def angle_marginal(omega, sigma: float, l_max: int):
    """Density of ω itself: f(ω) · (1 − cos ω) / π."""
    return igso3_density(omega, sigma, l_max) * (1.0 - np.cos(omega)) / math.pi


def auto_l_max(sigma: float) -> int:
    """Smallest l whose series term bound (2l+1)² e^{−l(l+1)σ²} is below the tail tolerance."""
    ls = np.arange(MAX_L_MAX + 1, dtype=np.float64)
    bound = (2 * ls + 1) ** 2 * np.exp(-ls * (ls + 1) * sigma**2)
    below = np.flatnonzero(bound < TAIL_TOL)
    l_max = int(below[0]) if below.size else MAX_L_MAX
    return int(np.clip(l_max, MIN_L_MAX, MAX_L_MAX))


@dataclass(frozen=True, eq=False)
class IGSO3Table:
    sigma_grid: np.ndarray
    omega_grid: np.ndarray
    cdf: np.ndarray
    l_max: int
    clamped_count: int = 0

    def __post_init__(self):
        if self.cdf.shape != (len(self.sigma_grid), len(self.omega_grid)):
            raise ConfigError("IGSO3 table CDF shape does not match its grids.")
        if np.any(np.diff(self.cdf, axis=1) < 0):
            raise ConfigError("IGSO3 CDF rows must be nondecreasing.")
        if np.abs(self.cdf[:, -1] - 1.0).max() > 1e-6 or np.abs(self.cdf[:, 0]).max() > 1e-6:
            raise ConfigError("IGSO3 CDF rows must run from 0 to 1.")

    @property
    def sigma_range(self):
        return float(self.sigma_grid[0]), float(self.sigma_grid[-1])

    def cdf_row(self, sigma: float) -> np.ndarray:
        lo, hi = self.sigma_range
        if not (lo - 1e-12 <= sigma <= hi + 1e-12):
            raise ConfigError(f"sigma {sigma} outside table range [{lo}, {hi}].")
        if len(self.sigma_grid) == 1:
            return self.cdf[0]
        j = int(np.clip(np.searchsorted(self.sigma_grid, sigma), 1, len(self.sigma_grid) - 1))
        s0, s1 = self.sigma_grid[j - 1], self.sigma_grid[j]
        frac = float(np.clip((sigma - s0) / (s1 - s0), 0.0, 1.0))
        return (1.0 - frac) * self.cdf[j - 1] + frac * self.cdf[j]


def default_sigma_grid(n: int = 64, sigma_min: float = 0.05, sigma_max: float = 4.0) -> np.ndarray:
    return np.geomspace(sigma_min, sigma_max, n)


def build_igso3_table(
    sigma_grid: Sequence[float],
    omega_resolution: int = DEFAULT_OMEGA_RESOLUTION,
    l_max: Optional[int] = None,
) -> IGSO3Table:
    sigma_grid = np.sort(np.asarray(sigma_grid, dtype=np.float64))
    if sigma_grid.size == 0 or omega_resolution < 2:
        raise ConfigError("IGSO3 table needs a nonempty sigma grid and at least 2 omega points.")
    if np.any(sigma_grid <= 0):
        raise ConfigError("IGSO3 sigma values must be positive.")
    if l_max is None:
        l_max = auto_l_max(float(sigma_grid[0]))

    omega = np.linspace(0.0, math.pi, omega_resolution)
    omega[0] = OMEGA_FLOOR

    rows = []
    clamped = 0
    for sigma in sigma_grid:
        pdf = angle_marginal(omega, float(sigma), l_max)
        negative = pdf < 0
        if np.any(negative):
            clamped += int(negative.sum())
            pdf = np.where(negative, 0.0, pdf)
        cdf = cumulative_trapezoid(pdf, omega, initial=0.0)
        rows.append(cdf / cdf[-1])

    if clamped:
        logger.warning(f"Clamped {clamped} negative IGSO3 density values to zero (l_max={l_max})")
    logger.info(f"Built IGSO3 table: {sigma_grid.size} sigmas x {omega_resolution} omegas, l_max={l_max}")

    return IGSO3Table(
        sigma_grid=sigma_grid,
        omega_grid=omega,
        cdf=np.stack(rows),
        l_max=int(l_max),
        clamped_count=clamped,
    )


def sample_angles(sigma: float, table: IGSO3Table, rng: np.random.Generator, n: int) -> np.ndarray:
    row = table.cdf_row(sigma)
    return np.interp(rng.random(n), row, table.omega_grid)


def _sample_axes(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def igso3_sample(sigma: float, table: IGSO3Table, rng: np.random.Generator) -> Rotation:
    omega = float(sample_angles(sigma, table, rng, 1)[0])
    axis = _sample_axes(rng, 1)[0]
    return axis_angle(axis, omega)


def igso3_sample_batch(sigma: float, table: IGSO3Table, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` rotation matrices, shape ``(n, 3, 3)``."""
    omega = sample_angles(sigma, table, rng, n)
    axes = _sample_axes(rng, n)
    return ScipyRotation.from_rotvec(axes * omega[:, None]).as_matrix().reshape(n, 3, 3)
