"""
Reverse diffusion in latent space with the IPA token cache.

Step ``t`` receives ``z_{t+1}`` and builds its activity mask against the
previous step's input ``z_{t+2}`` (all active on the first step). IPA frames
come from decoding the current clean-latent estimate every ``frame_refresh``
steps and stay fixed in between.
"""

import asyncio
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, Optional, Tuple

import numpy as np
import torch

from .decoder import FrameDecoder, decode_latents, ipa_frames
from .diffusion import NoiseSchedule
from .dit import LatentDiT, cfg_predict
from .exceptions import ConfigError, ShapeMismatch
from .geometry import AtomicBackbone, BackboneFrames, atoms_from_frames
from .ipa import ActivityMask, IPACacheSet, compute_mask, ipa_cached, ipa_full
from .models.config import SamplerConfig
from .tokenizer import Codebook, TokenSequence, nearest_rows, upsample_tokens

logger = logging.getLogger(__name__)

COND, UNCOND = "cond", "uncond"


def predict_x0(x_t: torch.Tensor, eps_hat: torch.Tensor, t: int, sched: NoiseSchedule) -> torch.Tensor:
    ab = float(sched.alpha_bar[t])
    return (x_t - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab)


def reverse_step(x_next: torch.Tensor, eps_hat: torch.Tensor, t: int, sched: NoiseSchedule,
                 generator: Optional[torch.Generator] = None, variance_scale: float = 1.0) -> torch.Tensor:
    """Ancestral DDPM update; posterior-variance noise for ``t > 0`` only."""
    sched.check_step(t)
    if x_next.shape != eps_hat.shape:
        raise ShapeMismatch(f"Latents {tuple(x_next.shape)} and noise {tuple(eps_hat.shape)} differ.")
    beta = float(sched.beta[t])
    ab = float(sched.alpha_bar[t])
    mean = (x_next - beta / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(1.0 - beta)
    if t == 0:
        return mean
    noise = torch.randn(x_next.shape, generator=generator, dtype=x_next.dtype)
    if variance_scale == 0:
        return mean
    return mean + variance_scale * math.sqrt(float(sched.posterior_variance[t])) * noise


def ddim_step(x_next: torch.Tensor, eps_hat: torch.Tensor, t: int, sched: NoiseSchedule) -> torch.Tensor:
    """Deterministic update through the clean-latent estimate."""
    sched.check_step(t)
    ab_prev = float(sched.alpha_bar_prev[t])
    x0 = predict_x0(x_next, eps_hat, t, sched)
    return math.sqrt(ab_prev) * x0 + math.sqrt(1.0 - ab_prev) * eps_hat


def quantize_latent(z0: torch.Tensor, cb: Codebook) -> TokenSequence:
    tokens, _ = nearest_rows(z0.detach().cpu().numpy(), cb.embeddings)
    return TokenSequence(tokens)


@dataclass
class SamplerModels:
    dit: Optional[LatentDiT]
    decoder: Optional[FrameDecoder]
    codebook: Optional[Codebook]

    def check(self):
        missing = [n for n in ("dit", "decoder", "codebook") if getattr(self, n) is None]
        if missing:
            raise ConfigError(f"Sampling needs trained models; missing: {', '.join(missing)}.")


@dataclass
class StepRecord:
    t: int
    rho: float
    active: int
    ipa_calls: int
    pair_updates: int
    projection_ops: int
    wall_ns: int
    bytes: int
    cached: bool
    frame_refresh: bool = False


@dataclass
class Trajectory:
    records: List[StepRecord] = field(default_factory=list)
    latents: Deque[torch.Tensor] = field(default_factory=deque)
    z0: Optional[torch.Tensor] = None
    tokens: Optional[TokenSequence] = None
    frames: Optional[BackboneFrames] = None
    atoms: Optional[AtomicBackbone] = None

    @property
    def rho(self) -> np.ndarray:
        return np.array([r.rho for r in self.records])

    @property
    def total_pair_updates(self) -> int:
        return sum(r.pair_updates for r in self.records)

    @property
    def wall_ns(self) -> int:
        return sum(r.wall_ns for r in self.records)

    def as_rows(self) -> List[dict]:
        return [r.__dict__.copy() for r in self.records]


class _StepCounters:
    def __init__(self):
        self.calls = 0
        self.pairs = 0
        self.projections = 0

    def add(self, counter):
        self.calls += 1
        self.pairs += counter.pair_updates
        self.projections += counter.projection_ops


def _latent_length(cfg: SamplerConfig, cb: Codebook) -> int:
    return -(-cfg.length // cb.pool)


def _decode_for_ipa(x0_hat: torch.Tensor, models: SamplerModels, length: int):
    return ipa_frames(x0_hat, models.decoder, models.codebook.pool, length)


def _finish(traj: Trajectory, x: torch.Tensor, cfg: SamplerConfig, models: SamplerModels):
    cb = models.codebook
    traj.z0 = x
    coarse = quantize_latent(x, cb)
    tokens = upsample_tokens(coarse.tokens, cb.pool, cfg.length) if cb.pool > 1 else coarse.tokens
    traj.tokens = TokenSequence(tokens)
    traj.frames = decode_latents(torch.from_numpy(cb.embeddings[tokens].copy()), models.decoder)
    traj.atoms = atoms_from_frames(traj.frames)
    return traj, traj.frames


def _refresh_due(use_ipa: bool, step: int, t: int, cfg: SamplerConfig) -> bool:
    return use_ipa and (step + 1) % cfg.frame_refresh == 0 and t > 0


def _update(x, eps_hat, t, sched, cfg: SamplerConfig, gen):
    if cfg.update_rule == "ddim":
        return ddim_step(x, eps_hat, t, sched)
    return reverse_step(x, eps_hat, t, sched, gen)


@torch.no_grad()
def sample(cfg: SamplerConfig, models: SamplerModels, sched: NoiseSchedule) -> Tuple[Trajectory, BackboneFrames]:
    """
    Cached sampler. ``per-token`` mode runs every IPA layer through the token
    cache each step; ``global`` mode uses the cache (conditional branch only)
    when the previous step's ρ is below ``rho_gate`` and ``t`` is inside the
    final ``gate_start_fraction`` of the trajectory, and full guided IPA otherwise.
    """
    models.check()
    if cfg.T != sched.T:
        raise ConfigError(f"Sampler T={cfg.T} does not match schedule T={sched.T}.")
    dit, cb = models.dit, models.codebook
    dit.eval()
    use_ipa = any(b.ipa is not None for b in dit.blocks)

    gen = torch.Generator().manual_seed(cfg.seed)
    L = _latent_length(cfg, cb)
    x = torch.randn(L, cb.d, generator=gen, dtype=torch.float64)
    rots, trans = _decode_for_ipa(x, models, cfg.length) if use_ipa else (None, None)

    traj = Trajectory(latents=deque(maxlen=cfg.keep_latents))
    caches = IPACacheSet()
    prev_input: Optional[torch.Tensor] = None
    prev_rho = 1.0
    refreshed = False

    for step, t in enumerate(reversed(range(sched.T))):
        start = time.perf_counter_ns()
        # new frames move every cached point
        mask = ActivityMask.full(L) if refreshed else compute_mask(x, prev_input, cfg.eps_cache)
        counters = _StepCounters()

        def cached_hook(branch, layer, module, u):
            out, cache, counter = ipa_cached(u[0], rots, trans, mask, caches.get(branch, layer), module)
            caches.put(branch, layer, cache)
            counters.add(counter)
            return out[None]

        def full_hook(branch, layer, module, u):
            out, cache, counter = ipa_full(u[0], rots, trans, module)
            caches.put(branch, layer, cache)
            counters.add(counter)
            return out[None]

        def hooks(fn):
            return {b: (lambda layer, module, u, b=b: fn(b, layer, module, u)) for b in (COND, UNCOND)}

        gated = False
        if cfg.gate_mode == "global":
            gated = prev_rho < cfg.rho_gate and t < cfg.gate_start_fraction * sched.T
            if gated:
                eps_hat = dit.predict(x, t, cfg.class_id, rots, trans, hooks(cached_hook)[COND])
            else:
                eps_hat = cfg_predict(dit, x, t, cfg.class_id, cfg.guidance_w, rots, trans, hooks(full_hook))
        else:
            eps_hat = cfg_predict(dit, x, t, cfg.class_id, cfg.guidance_w, rots, trans, hooks(cached_hook))

        x_next = _update(x, eps_hat, t, sched, cfg, gen)
        frame_refresh = refreshed
        refreshed = _refresh_due(use_ipa, step, t, cfg)
        if refreshed:
            rots, trans = _decode_for_ipa(predict_x0(x, eps_hat, t, sched), models, cfg.length)

        traj.records.append(
            StepRecord(
                t=t,
                rho=mask.rho,
                active=mask.active,
                ipa_calls=counters.calls,
                pair_updates=counters.pairs,
                projection_ops=counters.projections,
                wall_ns=time.perf_counter_ns() - start,
                bytes=caches.resident_bytes(),
                cached=gated or cfg.gate_mode == "per-token",
                frame_refresh=frame_refresh,
            )
        )
        if cfg.keep_latents:
            traj.latents.append(x.clone())
        prev_input, prev_rho = x, mask.rho
        x = x_next

    logger.debug(f"Sampled L={cfg.length} seed={cfg.seed}: mean rho {traj.rho.mean():.3f}")
    return _finish(traj, x, cfg, models)


@torch.no_grad()
def sample_reference(cfg: SamplerConfig, models: SamplerModels, sched: NoiseSchedule) -> Tuple[Trajectory, BackboneFrames]:
    """Straight-line sampler without any cache: guided full forward every step."""
    models.check()
    if cfg.T != sched.T:
        raise ConfigError(f"Sampler T={cfg.T} does not match schedule T={sched.T}.")
    dit, cb = models.dit, models.codebook
    dit.eval()
    use_ipa = any(b.ipa is not None for b in dit.blocks)
    n_ipa = sum(b.ipa is not None for b in dit.blocks)
    branches = 1 if cfg.guidance_w == 0 else 2

    gen = torch.Generator().manual_seed(cfg.seed)
    L = _latent_length(cfg, cb)
    x = torch.randn(L, cb.d, generator=gen, dtype=torch.float64)
    rots, trans = _decode_for_ipa(x, models, cfg.length) if use_ipa else (None, None)
    traj = Trajectory(latents=deque(maxlen=cfg.keep_latents))
    refreshed = False

    for step, t in enumerate(reversed(range(sched.T))):
        start = time.perf_counter_ns()
        eps_hat = cfg_predict(dit, x, t, cfg.class_id, cfg.guidance_w, rots, trans)
        x_next = _update(x, eps_hat, t, sched, cfg, gen)
        frame_refresh = refreshed
        refreshed = _refresh_due(use_ipa, step, t, cfg)
        if refreshed:
            rots, trans = _decode_for_ipa(predict_x0(x, eps_hat, t, sched), models, cfg.length)
        calls = n_ipa * branches if use_ipa else 0
        traj.records.append(
            StepRecord(
                t=t,
                rho=1.0,
                active=L,
                ipa_calls=calls,
                pair_updates=calls * L * L,
                projection_ops=calls * 2 * L,
                wall_ns=time.perf_counter_ns() - start,
                bytes=0,
                cached=False,
                frame_refresh=frame_refresh,
            )
        )
        if cfg.keep_latents:
            traj.latents.append(x.clone())
        x = x_next

    return _finish(traj, x, cfg, models)


def sample_many(cfg: SamplerConfig, models: SamplerModels, sched: NoiseSchedule, n: int,
                workers: Optional[int] = None, reference: bool = False) -> List[Tuple[Trajectory, BackboneFrames]]:
    """Independent trajectories with seeds ``seed + i`` and private caches."""
    fn = sample_reference if reference else sample
    configs = [cfg.model_copy(update={"seed": cfg.seed + i}) for i in range(n)]
    workers = workers or cfg.workers
    if workers <= 1:
        return [fn(c, models, sched) for c in configs]

    async def run_all():
        sem = asyncio.Semaphore(workers)

        async def one(c):
            async with sem:
                return await asyncio.to_thread(fn, c, models, sched)

        return await asyncio.gather(*(one(c) for c in configs))

    return list(asyncio.run(run_all()))
