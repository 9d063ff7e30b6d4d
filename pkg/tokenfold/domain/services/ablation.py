"""
Ablation grids. Each grid returns one DataFrame:

- speed: ``variant, tokenized, cached, eps, validity_pct, wall_s_per_sample, ms_per_step, pair_updates_per_step``
- dimension: ``d, validity_pct, diversity, wall_s_mean``
- granularity: ``k, K, latent_length, validity_pct, wall_s_mean``
- guidance: ``w, class_id, validity_pct, class_alignment, diversity``
- length: ``length, validity_pct, wall_s_mean, rho_mean, diversity``
"""

import logging
import time
from typing import Callable, Dict, List

import numpy as np
import pandas as pd
import torch

from ..dit import LatentDiT, cfg_predict
from ..exceptions import ConfigError
from ..metrics import diversity, secondary_structure_class, validity_rate
from ..models.config import RunConfig
from ..sampler import reverse_step
from .corpus import CorpusService
from .sampling import SampleResult, SamplingService
from .training import fit_models

logger = logging.getLogger(__name__)

GRIDS = ("speed", "dimension", "guidance", "granularity", "length")
CACHED_EPS = 0.05
CONTROL_TIMING_STEPS = 20


def _wall_s(results: List[SampleResult]) -> float:
    return float(np.mean([r.trajectory.wall_ns for r in results])) / 1e9


def _validity_pct(results: List[SampleResult]) -> float:
    return 100.0 * validity_rate([r.report for r in results])


def coordinate_control(cfg: RunConfig, length: int) -> LatentDiT:
    """Untrained control diffusing a 3·L-wide coordinate vector per token."""
    width = 3 * length
    heads = cfg.dit.n_heads
    d_model = max(cfg.dit.d_model, -(-width // heads) * heads)
    dit_cfg = cfg.dit.model_copy(update={"d_model": d_model, "d_ff": 4 * d_model, "max_len": max(cfg.dit.max_len, length)})
    return LatentDiT(dit_cfg, width, cfg.ipa)


@torch.no_grad()
def time_control(cfg: RunConfig, sampling: SamplingService, length: int, steps: int = CONTROL_TIMING_STEPS) -> float:
    """Milliseconds per reverse step of the coordinate control (guided, frames from the identity chain)."""
    torch.manual_seed(cfg.seed)
    model = coordinate_control(cfg, length).eval()
    sched = sampling.schedule
    gen = torch.Generator().manual_seed(cfg.seed)
    x = torch.randn(length, model.d_latent, generator=gen, dtype=torch.float64)
    rots = torch.eye(3, dtype=torch.float64).expand(length, 3, 3).clone()
    trans = torch.zeros(length, 3, dtype=torch.float64)
    trans[:, 0] = 3.8 * torch.arange(length, dtype=torch.float64)
    start = time.perf_counter_ns()
    for t in list(reversed(range(sched.T)))[:steps]:
        eps_hat = cfg_predict(model, x, t, cfg.sampler.class_id, cfg.sampler.guidance_w, rots, trans)
        x = reverse_step(x, eps_hat, t, sched, gen)
    return (time.perf_counter_ns() - start) / 1e6 / steps


class AblationService:

    def __init__(self, cfg: RunConfig, sampling: SamplingService, corpus: CorpusService):
        self.cfg = cfg
        self.sampling = sampling
        self.corpus = corpus

    @property
    def n(self) -> int:
        return self.cfg.bench.ablation_samples

    def run(self, grid: str) -> pd.DataFrame:
        grids: Dict[str, Callable[[], pd.DataFrame]] = {
            "speed": self.speed,
            "dimension": self.dimension,
            "guidance": self.guidance,
            "granularity": self.granularity,
            "length": self.length,
        }
        if grid not in grids:
            raise ConfigError(f"Unknown ablation grid '{grid}'; choose from {', '.join(GRIDS)}.")
        logger.info(f"Running ablation grid '{grid}'")
        return grids[grid]()

    def speed(self) -> pd.DataFrame:
        scfg = self.cfg.sampler
        L = scfg.length
        rows = []
        ms = time_control(self.cfg, self.sampling, L)
        rows.append(
            {
                "variant": "raw_coordinates", "tokenized": False, "cached": False, "eps": 0.0,
                "validity_pct": float("nan"), "wall_s_per_sample": ms * self.cfg.schedule.T / 1e3,
                "ms_per_step": ms, "pair_updates_per_step": float(L * L),
            }
        )
        for variant, cached, eps in (("tokenized", False, 0.0), ("tokenized_cached", True, CACHED_EPS)):
            results = self.sampling.sample(self.n, scfg.model_copy(update={"eps_cache": eps}), reference=not cached)
            steps = sum(len(r.trajectory.records) for r in results)
            rows.append(
                {
                    "variant": variant, "tokenized": True, "cached": cached, "eps": eps,
                    "validity_pct": _validity_pct(results),
                    "wall_s_per_sample": _wall_s(results),
                    "ms_per_step": sum(r.trajectory.wall_ns for r in results) / 1e6 / steps,
                    "pair_updates_per_step": sum(r.trajectory.total_pair_updates for r in results) / steps,
                }
            )
        return pd.DataFrame(rows)

    def _retrained(self, update: dict) -> SamplingService:
        cfg = self.cfg.model_copy(update={"tokenizer": self.cfg.tokenizer.model_copy(update=update)})
        service = SamplingService(cfg, store=None)
        service.use_models(fit_models(cfg, self.corpus.load()))
        return service

    def dimension(self) -> pd.DataFrame:
        rows = []
        for d in self.cfg.bench.dimension_sweep:
            results = self._retrained({"d": d}).sample(self.n)
            rows.append(
                {
                    "d": d,
                    "validity_pct": _validity_pct(results),
                    "diversity": diversity([r.atoms for r in results]),
                    "wall_s_mean": _wall_s(results),
                }
            )
        return pd.DataFrame(rows)

    def granularity(self) -> pd.DataFrame:
        residues = sum(len(f) for f in self.corpus.frames())
        rows = []
        for k in self.cfg.bench.granularity_sweep:
            # keep at least 10 pooled rows per centroid
            K = min(self.cfg.tokenizer.K, max(2, residues // k // 10))
            results = self._retrained({"pool": k, "K": K}).sample(self.n)
            rows.append(
                {
                    "k": k, "K": K, "latent_length": -(-self.cfg.sampler.length // k),
                    "validity_pct": _validity_pct(results),
                    "wall_s_mean": _wall_s(results),
                }
            )
        return pd.DataFrame(rows)

    def guidance(self) -> pd.DataFrame:
        rows = []
        for w in self.cfg.bench.guidance_sweep:
            for c in self.cfg.corpus.classes:
                scfg = self.cfg.sampler.model_copy(update={"guidance_w": w, "class_id": c})
                results = self.sampling.sample(self.n, scfg)
                rows.append(
                    {
                        "w": w, "class_id": c,
                        "validity_pct": _validity_pct(results),
                        "class_alignment": float(np.mean([secondary_structure_class(r.atoms) == c for r in results])),
                        "diversity": diversity([r.atoms for r in results]),
                    }
                )
        return pd.DataFrame(rows)

    def length(self) -> pd.DataFrame:
        rows = []
        for L in self.cfg.bench.lengths:
            results = self.sampling.sample(self.n, self.cfg.sampler.model_copy(update={"length": L}))
            rows.append(
                {
                    "length": L,
                    "validity_pct": _validity_pct(results),
                    "wall_s_mean": _wall_s(results),
                    "rho_mean": float(np.mean([r.trajectory.rho.mean() for r in results])),
                    "diversity": diversity([r.atoms for r in results]),
                }
            )
        return pd.DataFrame(rows)
