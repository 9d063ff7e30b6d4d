"""
Invariant Point Attention with a token cache.

Points are produced in each residue's local frame and mapped to global
coordinates by that frame. Queries and keys share one point set per head, so
the cached squared-distance matrix is symmetric with a zero diagonal.

The cached path keeps keys, values, global points and distances for stale
tokens, recomputes them for active tokens only, and always recomputes the
query rows of every token from the merged state.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from .exceptions import CacheInvalid, ShapeMismatch
from .geometry import BackboneFrames
from .models.config import IPAConfig

logger = logging.getLogger(__name__)


def frames_to_tensors(frames: BackboneFrames) -> Tuple[torch.Tensor, torch.Tensor]:
    return torch.from_numpy(frames.rots.copy()), torch.from_numpy(frames.trans.copy())


def to_global(points: torch.Tensor, rots: torch.Tensor, trans: torch.Tensor) -> torch.Tensor:
    """(b, h, n, p, 3) local points → global via per-residue frames (b, n, 3, 3), (b, n, 3)."""
    return torch.einsum("bnij,bhnpj->bhnpi", rots, points) + trans[:, None, :, None, :]


def to_local(points: torch.Tensor, rots: torch.Tensor, trans: torch.Tensor) -> torch.Tensor:
    return torch.einsum("bnji,bhnpj->bhnpi", rots, points - trans[:, None, :, None, :])


def pair_sq_distances(pa: torch.Tensor, pb: torch.Tensor) -> torch.Tensor:
    """Σ_p ‖a_i^p − b_j^p‖² per head: (b, h, i, p, 3) × (b, h, j, p, 3) → (b, h, i, j)."""
    diff = pa[:, :, :, None] - pb[:, :, None, :]
    return (diff * diff).sum(dim=(-1, -2))


class InvariantPointAttention(nn.Module):
    def __init__(self, d_model: int, cfg: IPAConfig):
        super().__init__()
        self.cfg = cfg
        h, c = cfg.n_heads, cfg.d_head
        pq, pv = cfg.n_query_points, cfg.n_value_points

        self.to_q = nn.Linear(d_model, h * c, bias=False)
        self.to_k = nn.Linear(d_model, h * c, bias=False)
        self.to_v = nn.Linear(d_model, h * c, bias=False)
        self.to_points = nn.Linear(d_model, h * pq * 3)
        self.to_value_points = nn.Linear(d_model, h * pv * 3)
        # softplus(head_weights) = 1 at init
        self.head_weights = nn.Parameter(torch.full((h,), math.log(math.e - 1.0)))
        self.to_out = nn.Linear(h * (c + pv * 3 + pv), d_model)

        self.scalar_scale = (2 * c) ** -0.5
        self.point_scale = (2 * pq * 9 / 2) ** -0.5
        self.double()

    def queries(self, x: torch.Tensor) -> torch.Tensor:
        return rearrange(self.to_q(x), "b n (h c) -> b h n c", h=self.cfg.n_heads)

    def keys_values(self, x: torch.Tensor, rots: torch.Tensor, trans: torch.Tensor):
        h = self.cfg.n_heads
        k = rearrange(self.to_k(x), "b n (h c) -> b h n c", h=h)
        v = rearrange(self.to_v(x), "b n (h c) -> b h n c", h=h)
        pts = rearrange(self.to_points(x), "b n (h p c) -> b h n p c", h=h, c=3)
        vpts = rearrange(self.to_value_points(x), "b n (h p c) -> b h n p c", h=h, c=3)
        return k, v, to_global(pts, rots, trans), to_global(vpts, rots, trans)

    def attention(self, q, k, dist) -> torch.Tensor:
        logits = torch.einsum("bhic,bhjc->bhij", q, k) * self.scalar_scale
        gamma = self.cfg.distance_weight
        if gamma:
            w = F.softplus(self.head_weights)[None, :, None, None]
            logits = logits - 0.5 * gamma * self.point_scale * w * dist
        return logits.softmax(dim=-1)

    def combine(self, attn, v, vpts, rots, trans) -> torch.Tensor:
        o = torch.einsum("bhij,bhjc->bhic", attn, v)
        o_pts = to_local(torch.einsum("bhij,bhjpx->bhipx", attn, vpts), rots, trans)
        norms = torch.sqrt((o_pts * o_pts).sum(dim=-1) + 1e-8)
        feats = torch.cat(
            [
                rearrange(o, "b h n c -> b n (h c)"),
                rearrange(o_pts, "b h n p x -> b n (h p x)"),
                rearrange(norms, "b h n p -> b n (h p)"),
            ],
            dim=-1,
        )
        return self.to_out(feats)

    def forward(self, x: torch.Tensor, rots: torch.Tensor, trans: torch.Tensor) -> torch.Tensor:
        q = self.queries(x)
        k, v, pts, vpts = self.keys_values(x, rots, trans)
        return self.combine(self.attention(q, k, pair_sq_distances(pts, pts)), v, vpts, rots, trans)


@dataclass(frozen=True, eq=False)
class ActivityMask:
    bits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=bool).reshape(-1))

    @property
    def L(self) -> int:
        return self.bits.shape[0]

    @property
    def active(self) -> int:
        return int(self.bits.sum())

    @property
    def rho(self) -> float:
        return self.active / self.L if self.L else 0.0

    @property
    def all_active(self) -> bool:
        return bool(self.bits.all())

    @classmethod
    def full(cls, L: int) -> "ActivityMask":
        return cls(np.ones(L, dtype=bool))


@dataclass
class IPACache:
    keys: Optional[torch.Tensor] = None
    values: Optional[torch.Tensor] = None
    point_keys: Optional[torch.Tensor] = None
    point_values: Optional[torch.Tensor] = None
    dist: Optional[torch.Tensor] = None
    prev_latents: Optional[torch.Tensor] = None
    prev_output: Optional[torch.Tensor] = None
    prev_rots: Optional[torch.Tensor] = None
    prev_trans: Optional[torch.Tensor] = None
    valid: bool = False

    def tensors(self):
        return [
            t
            for t in (
                self.keys,
                self.values,
                self.point_keys,
                self.point_values,
                self.dist,
                self.prev_latents,
                self.prev_output,
                self.prev_rots,
                self.prev_trans,
            )
            if t is not None
        ]


def resident_bytes(cache: IPACache) -> int:
    return int(sum(t.numel() * t.element_size() for t in cache.tensors()))


def same_frames(cache: IPACache, rots: torch.Tensor, trans: torch.Tensor) -> bool:
    """Cached points are only reusable under the frames they were placed with."""
    if cache.prev_rots is None or cache.prev_trans is None:
        return False
    return torch.equal(cache.prev_rots, rots) and torch.equal(cache.prev_trans, trans)


@dataclass
class OpCounter:
    pair_updates: int = 0
    projection_ops: int = 0
    full_pair_budget: int = 0

    def __post_init__(self):
        if self.pair_updates > self.full_pair_budget:
            raise ShapeMismatch(f"pair_updates {self.pair_updates} exceeds budget {self.full_pair_budget}.")


@dataclass
class IPACacheSet:
    """Private caches of one trajectory, keyed by (guidance branch, layer)."""

    caches: Dict[Tuple[str, int], IPACache] = field(default_factory=dict)

    def get(self, branch: str, layer: int) -> IPACache:
        return self.caches.setdefault((branch, layer), IPACache())

    def put(self, branch: str, layer: int, cache: IPACache):
        self.caches[(branch, layer)] = cache

    def resident_bytes(self) -> int:
        return sum(resident_bytes(c) for c in self.caches.values())


def compute_mask(z_curr: torch.Tensor, z_prev: Optional[torch.Tensor], eps: float) -> ActivityMask:
    """Bit i set iff ‖z_curr,i − z_prev,i‖₂ > eps; no previous state → all active."""
    if z_prev is None:
        return ActivityMask.full(z_curr.shape[-2])
    if tuple(z_curr.shape) != tuple(z_prev.shape):
        raise ShapeMismatch(f"Mask inputs differ in shape: {tuple(z_curr.shape)} vs {tuple(z_prev.shape)}.")
    delta = torch.linalg.vector_norm(z_curr - z_prev, dim=-1)
    return ActivityMask((delta > eps).cpu().numpy())


def ipa_full(latents: torch.Tensor, rots: torch.Tensor, trans: torch.Tensor, module: InvariantPointAttention):
    """Full recomputation for one chain: latents (L, d), rots (L, 3, 3), trans (L, 3)."""
    L = latents.shape[0]
    x, r, t = latents[None], rots[None], trans[None]
    q = module.queries(x)
    k, v, pts, vpts = module.keys_values(x, r, t)
    dist = pair_sq_distances(pts, pts)
    out = module.combine(module.attention(q, k, dist), v, vpts, r, t)[0]
    cache = IPACache(
        keys=k[0],
        values=v[0],
        point_keys=pts[0],
        point_values=vpts[0],
        dist=dist[0],
        prev_latents=latents,
        prev_output=out,
        prev_rots=rots,
        prev_trans=trans,
        valid=True,
    )
    return out, cache, OpCounter(pair_updates=L * L, projection_ops=2 * L, full_pair_budget=L * L)


def ipa_cached(
    latents: torch.Tensor,
    rots: torch.Tensor,
    trans: torch.Tensor,
    mask: ActivityMask,
    cache: IPACache,
    module: InvariantPointAttention,
):
    L = latents.shape[0]
    if mask.L != L:
        raise ShapeMismatch(f"Mask of length {mask.L} for {L} tokens.")
    if mask.all_active:
        return ipa_full(latents, rots, trans, module)
    if not cache.valid:
        raise CacheInvalid()
    if cache.prev_latents.shape != latents.shape:
        raise ShapeMismatch("Cached state was built for a different chain length.")
    if not same_frames(cache, rots, trans):
        return ipa_full(latents, rots, trans, module)

    a = mask.active
    budget = L * L
    if a == 0 and torch.equal(latents, cache.prev_latents):
        return cache.prev_output, cache, OpCounter(0, 0, budget)

    act = torch.as_tensor(np.flatnonzero(mask.bits), dtype=torch.long)
    x, r, t = latents[None], rots[None], trans[None]
    q = module.queries(x)

    keys, values = cache.keys.clone(), cache.values.clone()
    pts, vpts = cache.point_keys.clone(), cache.point_values.clone()
    dist = cache.dist.clone()
    if a:
        k_a, v_a, p_a, vp_a = module.keys_values(x[:, act], r[:, act], t[:, act])
        keys[:, act], values[:, act] = k_a[0], v_a[0]
        pts[:, act], vpts[:, act] = p_a[0], vp_a[0]
        rows = pair_sq_distances(p_a, pts[None])[0]
        dist[:, act, :] = rows
        dist[:, :, act] = rows.transpose(-1, -2)

    attn = module.attention(q, keys[None], dist[None])
    out = module.combine(attn, values[None], vpts[None], r, t)[0]
    merged = IPACache(
        keys=keys,
        values=values,
        point_keys=pts,
        point_values=vpts,
        dist=dist,
        prev_latents=latents,
        prev_output=out,
        prev_rots=rots,
        prev_trans=trans,
        valid=True,
    )
    counter = OpCounter(pair_updates=2 * a * L - a * a, projection_ops=L + a, full_pair_budget=budget)
    return out, merged, counter


def count_report(counter: OpCounter, mask: ActivityMask) -> dict:
    L, a = mask.L, mask.active
    theoretical = 2 * a * L - a * a
    return {
        "rho": mask.rho,
        "active": a,
        "pair_updates": counter.pair_updates,
        "theoretical": theoretical,
        "matches": counter.pair_updates == theoretical,
    }
