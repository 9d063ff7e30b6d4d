"""
Latent diffusion transformer predicting the noise ε̂(x_t, t, c).

Each block runs three adaLN-modulated residual sub-layers: multi-head
self-attention, invariant point attention over residue frames, and a
feed-forward network. Conditioning (timestep embedding + class embedding)
enters only through the modulation.
"""

import logging
import math
from dataclasses import dataclass
from functools import partial
from typing import Callable, Dict, List, Optional, Sequence

import torch
import torch.nn as nn
from einops import rearrange

from .diffusion import NoiseSchedule, q_sample
from .exceptions import ConfigError, ShapeMismatch
from .ipa import InvariantPointAttention
from .models.config import DiTConfig, IPAConfig, TrainingConfig

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-5
FREQUENCY_DIM = 256

# (layer index, IPA module, normalized hidden (1, L, d)) -> IPA output (1, L, d)
IPAHook = Callable[[int, InvariantPointAttention, torch.Tensor], torch.Tensor]


def timestep_embedding(t, T: int, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """
    Sinusoidal features ``[cos, sin]`` of ``t`` rescaled to a 1000-step clock.
    Accepts a scalar or a 1-D tensor of steps; returns ``(dim,)`` or ``(N, dim)``.
    """
    t_arr = torch.as_tensor(t, dtype=torch.float64)
    scalar = t_arr.ndim == 0
    t_arr = t_arr.reshape(-1)
    if torch.any(t_arr < 0) or torch.any(t_arr >= T):
        raise ConfigError(f"Timestep outside [0, {T}).")
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = (t_arr * (1000.0 / T))[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb[0] if scalar else emb


def adaln(h: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    """Normalize each row over features (variance floored at 1e-5), then ``γ·ĥ + β``."""
    mean = h.mean(dim=-1, keepdim=True)
    var = ((h - mean) ** 2).mean(dim=-1, keepdim=True)
    return gamma * (h - mean) / torch.sqrt(var.clamp_min(VARIANCE_FLOOR)) + beta


class TimestepEmbedder(nn.Module):
    def __init__(self, hidden: int, T: int, frequency_dim: int = FREQUENCY_DIM):
        super().__init__()
        self.T = T
        self.frequency_dim = frequency_dim
        self.mlp = nn.Sequential(nn.Linear(frequency_dim, hidden), nn.SiLU(), nn.Linear(hidden, hidden))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return self.mlp(timestep_embedding(t, self.T, self.frequency_dim))


class ClassEmbedder(nn.Module):
    """Class table with one extra null row at index ``n_classes``."""

    def __init__(self, n_classes: int, hidden: int, dropout_prob: float):
        super().__init__()
        self.table = nn.Embedding(n_classes + 1, hidden)
        self.n_classes = n_classes
        self.dropout_prob = dropout_prob

    @property
    def null(self) -> int:
        return self.n_classes

    def token_drop(self, labels: torch.Tensor, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        drop = torch.rand(labels.shape[0], generator=generator, dtype=torch.float64) < self.dropout_prob
        return torch.where(drop, torch.full_like(labels, self.null), labels)

    def forward(self, labels: torch.Tensor) -> torch.Tensor:
        if labels.numel() and (labels.min() < 0 or labels.max() > self.n_classes):
            raise ConfigError(f"Class label outside [0, {self.n_classes}].")
        return self.table(labels)


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.scale = (d_model // n_heads) ** -0.5
        self.to_qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        q, k, v = rearrange(self.to_qkv(x), "b n (s h c) -> s b h n c", s=3, h=self.n_heads)
        attn = (torch.einsum("bhic,bhjc->bhij", q, k) * self.scale).softmax(dim=-1)
        return self.out(rearrange(torch.einsum("bhij,bhjc->bhic", attn, v), "b h n c -> b n (h c)"))


class DiTBlock(nn.Module):
    def __init__(self, cfg: DiTConfig, ipa_cfg: Optional[IPAConfig]):
        super().__init__()
        d = cfg.d_model
        self.attn = SelfAttention(d, cfg.n_heads)
        self.ipa = InvariantPointAttention(d, ipa_cfg) if ipa_cfg is not None else None
        self.ffn = nn.Sequential(nn.Linear(d, cfg.d_ff), nn.GELU(), nn.Linear(cfg.d_ff, d))
        self.sites = 3 if self.ipa is not None else 2
        self.modulation = nn.Sequential(nn.SiLU(), nn.Linear(d, 2 * self.sites * d))
        nn.init.zeros_(self.modulation[-1].weight)
        nn.init.zeros_(self.modulation[-1].bias)

    def forward(self, h, c, rots=None, trans=None, ipa_hook: Optional[Callable] = None):
        mods = self.modulation(c)[:, None, :].chunk(2 * self.sites, dim=-1)
        h = h + self.attn(adaln(h, 1 + mods[1], mods[0]))
        if self.ipa is not None and rots is not None:
            u = adaln(h, 1 + mods[3], mods[2])
            h = h + (self.ipa(u, rots, trans) if ipa_hook is None else ipa_hook(self.ipa, u))
        return h + self.ffn(adaln(h, 1 + mods[-1], mods[-2]))


class FinalLayer(nn.Module):
    def __init__(self, d_model: int, d_out: int):
        super().__init__()
        self.modulation = nn.Sequential(nn.SiLU(), nn.Linear(d_model, 2 * d_model))
        self.linear = nn.Linear(d_model, d_out)
        for layer in (self.modulation[-1], self.linear):
            nn.init.zeros_(layer.weight)
            nn.init.zeros_(layer.bias)

    def forward(self, h, c):
        shift, scale = self.modulation(c)[:, None, :].chunk(2, dim=-1)
        return self.linear(adaln(h, 1 + scale, shift))


class LatentDiT(nn.Module):
    def __init__(self, cfg: DiTConfig, d_latent: int, ipa_cfg: Optional[IPAConfig] = None):
        super().__init__()
        self.cfg = cfg
        self.d_latent = d_latent
        d = cfg.d_model
        self.x_embed = nn.Linear(d_latent, d)
        self.pos = nn.Parameter(torch.randn(cfg.max_len, d) * 0.02) if cfg.positional else None
        self.t_embed = TimestepEmbedder(d, cfg.T)
        self.y_embed = ClassEmbedder(cfg.n_classes, d, cfg.dropout_prob_condition)
        use_ipa = ipa_cfg if cfg.use_ipa else None
        self.blocks = nn.ModuleList([DiTBlock(cfg, use_ipa) for _ in range(cfg.n_layers)])
        self.final = FinalLayer(d, d_latent)
        self.double()

    @property
    def null_class(self) -> int:
        return self.cfg.n_classes

    def labels(self, c: Optional[int], batch: int = 1) -> torch.Tensor:
        if c is not None and not 0 <= c < self.cfg.n_classes:
            raise ConfigError(f"Class {c} outside [0, {self.cfg.n_classes}).")
        return torch.full((batch,), self.null_class if c is None else c, dtype=torch.long)

    def forward(self, x, t, y, rots=None, trans=None, ipa_hook: Optional[IPAHook] = None):
        """
        x: (B, L, d_latent); t: (B,) steps; y: (B,) labels, ``n_classes`` = null;
        rots/trans: (B, L, 3, 3) / (B, L, 3) frames for the IPA sub-layers.
        """
        B, L, _ = x.shape
        if x.shape[-1] != self.d_latent:
            raise ShapeMismatch(f"Latent width {x.shape[-1]} != {self.d_latent}.")
        h = self.x_embed(x)
        if self.pos is not None:
            if L > self.cfg.max_len:
                raise ConfigError(f"Chain length {L} exceeds max_len={self.cfg.max_len}.")
            h = h + self.pos[:L]
        c = self.t_embed(t) + self.y_embed(y)
        for i, block in enumerate(self.blocks):
            hook = None if ipa_hook is None else partial(ipa_hook, i)
            h = block(h, c, rots, trans, hook)
        return self.final(h, c)

    def predict(self, x, t: int, c: Optional[int], rots=None, trans=None, ipa_hook=None) -> torch.Tensor:
        """Single chain: x (L, d_latent) → ε̂ (L, d_latent)."""
        r = None if rots is None else rots[None]
        tr = None if trans is None else trans[None]
        return self.forward(x[None], torch.tensor([t]), self.labels(c), r, tr, ipa_hook)[0]


def cfg_combine(cond: torch.Tensor, uncond: torch.Tensor, w: float) -> torch.Tensor:
    if w == 0:
        return cond
    return (1 + w) * cond - w * uncond


def cfg_predict(model: LatentDiT, x_t, t: int, c: Optional[int], w: float, rots=None, trans=None,
                hooks: Optional[Dict[str, IPAHook]] = None) -> torch.Tensor:
    """``(1 + w)·ε̂(x, t, c) − w·ε̂(x, t, ∅)``; exactly the conditional forward at ``w = 0``."""
    if w < 0:
        raise ConfigError(f"Guidance scale must be >= 0, got {w}.")
    hooks = hooks or {}
    cond = model.predict(x_t, t, c, rots, trans, hooks.get("cond"))
    if w == 0:
        return cond
    uncond = model.predict(x_t, t, None, rots, trans, hooks.get("uncond"))
    return cfg_combine(cond, uncond, w)


@dataclass
class TrainingBatch:
    x0: torch.Tensor
    t: torch.Tensor
    c: torch.Tensor
    eps: torch.Tensor
    rots: Optional[torch.Tensor] = None
    trans: Optional[torch.Tensor] = None

    def __post_init__(self):
        B = self.x0.shape[0]
        if self.eps.shape != self.x0.shape or self.t.shape != (B,) or self.c.shape != (B,):
            raise ShapeMismatch("Training batch tensors disagree in shape.")


def training_loss(batch: TrainingBatch, model: LatentDiT, sched: NoiseSchedule,
                  generator: Optional[torch.Generator] = None, drop_labels: bool = True) -> torch.Tensor:
    if torch.any(batch.t < 0) or torch.any(batch.t >= sched.T):
        raise ConfigError("Batch timesteps outside the schedule.")
    ab = torch.as_tensor(sched.alpha_bar, dtype=batch.x0.dtype)[batch.t][:, None, None]
    x_t = torch.sqrt(ab) * batch.x0 + torch.sqrt(1 - ab) * batch.eps
    labels = model.y_embed.token_drop(batch.c, generator) if drop_labels else batch.c
    eps_hat = model(x_t, batch.t, labels, batch.rots, batch.trans)
    return ((batch.eps - eps_hat) ** 2).mean()


def loss_gradients(batch: TrainingBatch, model: LatentDiT, sched: NoiseSchedule,
                   generator: Optional[torch.Generator] = None, drop_labels: bool = True) -> Dict[str, torch.Tensor]:
    named = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    loss = training_loss(batch, model, sched, generator, drop_labels)
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    return {n: torch.zeros_like(p) if g is None else g for (n, p), g in zip(named, grads)}


def lr_at(step: int, cfg: TrainingConfig) -> float:
    """Linear warmup, then cosine decay to zero over the remaining steps."""
    warmup = cfg.effective_warmup()
    if step < warmup:
        return cfg.lr * (step + 1) / warmup
    progress = (step - warmup) / max(1, cfg.steps - warmup)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))


@dataclass
class DiTExample:
    """One training chain: clean latents, class label, frames decoded from the latents."""

    x0: torch.Tensor
    c: int
    rots: torch.Tensor
    trans: torch.Tensor


def sample_batch(examples: Sequence[DiTExample], batch_size: int, sched: NoiseSchedule,
                 gen: torch.Generator) -> TrainingBatch:
    """Random crops of a shared length drawn from one randomly chosen chain."""
    anchor = examples[int(torch.randint(len(examples), (1,), generator=gen))]
    Lc = anchor.x0.shape[0]
    pool = [e for e in examples if e.x0.shape[0] >= Lc]
    picks = torch.randint(len(pool), (batch_size,), generator=gen).tolist()
    xs, cs, rs, ts = [], [], [], []
    for i in picks:
        e = pool[i]
        start = int(torch.randint(e.x0.shape[0] - Lc + 1, (1,), generator=gen))
        xs.append(e.x0[start : start + Lc])
        rs.append(e.rots[start : start + Lc])
        ts.append(e.trans[start : start + Lc])
        cs.append(e.c)
    x0 = torch.stack(xs)
    return TrainingBatch(
        x0=x0,
        t=torch.randint(sched.T, (batch_size,), generator=gen),
        c=torch.tensor(cs, dtype=torch.long),
        eps=torch.randn(x0.shape, generator=gen, dtype=x0.dtype),
        rots=torch.stack(rs),
        trans=torch.stack(ts),
    )


def train_dit(model: LatentDiT, examples: Sequence[DiTExample], sched: NoiseSchedule, cfg: TrainingConfig,
              seed: int, metrics_logger: Optional[logging.Logger] = None) -> List[float]:
    if not examples:
        raise ConfigError("DiT training needs a non-empty corpus.")
    gen = torch.Generator().manual_seed(seed)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr, betas=tuple(cfg.betas), weight_decay=cfg.weight_decay)
    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lambda s: lr_at(s, cfg) / cfg.lr)
    losses: List[float] = []

    model.train()
    for step in range(cfg.steps):
        batch = sample_batch(examples, cfg.batch_size, sched, gen)
        loss = training_loss(batch, model, sched, gen)
        optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        lr = optimizer.param_groups[0]["lr"]
        optimizer.step()
        scheduler.step()
        losses.append(float(loss))
        if metrics_logger is not None and step % cfg.log_every == 0:
            metrics_logger.info(f"stage=dit step={step} loss={float(loss):.6f} lr={lr:.3e}")
    model.eval()

    if losses:
        logger.info(f"DiT trained {cfg.steps} steps: loss {losses[0]:.4f} -> {losses[-1]:.4f}")
    return losses
