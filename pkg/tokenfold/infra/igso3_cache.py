"""
On-disk cache of IGSO(3) angle CDF tables, keyed by content hash.
"""

import hashlib
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..domain.igso3 import IGSO3Table, auto_l_max, build_igso3_table

logger = logging.getLogger(__name__)

CACHE_FORMAT_VERSION = 1


def table_key(sigma_grid: np.ndarray, l_max: int, omega_resolution: int) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(sigma_grid, dtype=np.float64).tobytes())
    h.update(f"{l_max}:{omega_resolution}:{CACHE_FORMAT_VERSION}".encode())
    return h.hexdigest()


class IGSO3Cache:
    def __init__(self, cache_dir: Path):
        self.cache_dir = Path(cache_dir) / "igso3"

    def path_for(self, key: str) -> Path:
        return self.cache_dir / f"{key}.npz"

    def get_or_build(self, sigma_grid: Sequence[float], omega_resolution: int,
                     l_max: Optional[int] = None) -> IGSO3Table:
        grid = np.sort(np.asarray(sigma_grid, dtype=np.float64))
        if l_max is None:
            l_max = auto_l_max(float(grid[0]))
        path = self.path_for(table_key(grid, l_max, omega_resolution))
        if path.exists():
            try:
                with np.load(path) as data:
                    table = IGSO3Table(
                        sigma_grid=data["sigma_grid"],
                        omega_grid=data["omega_grid"],
                        cdf=data["cdf"],
                        l_max=int(data["l_max"]),
                        clamped_count=int(data["clamped_count"]),
                    )
                logger.debug(f"Loaded IGSO3 table from {path}")
                return table
            except Exception as exc:
                logger.warning(f"Ignoring unreadable IGSO3 cache file {path}: {exc}")

        table = build_igso3_table(grid, omega_resolution, l_max)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp.npz")
        np.savez(
            tmp,
            sigma_grid=table.sigma_grid,
            omega_grid=table.omega_grid,
            cdf=table.cdf,
            l_max=table.l_max,
            clamped_count=table.clamped_count,
        )
        tmp.replace(path)
        return table
