"""
Latent tokens to relative inter-residue transforms, and recursive frame assembly.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn

from .exceptions import ConfigError, ShapeMismatch
from .geometry import (
    BackboneFrames,
    RigidFrame,
    Rotation,
    aligned_rmsd,
    relative_frames,
)
from .models.config import DecoderConfig
from .tokenizer import Codebook, TokenSequence, embed, tokenize, upsample_tokens

logger = logging.getLogger(__name__)


def normalize_quaternion(q: torch.Tensor) -> torch.Tensor:
    """Unit quaternions with nonnegative scalar part."""
    q = q / q.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    sign = 1.0 - 2.0 * (q[..., :1] < 0).to(q.dtype)
    return q * sign


def quaternion_to_matrix(q: torch.Tensor) -> torch.Tensor:
    w, x, y, z = q.unbind(-1)
    return torch.stack(
        [
            1 - 2 * (y * y + z * z),
            2 * (x * y - w * z),
            2 * (x * z + w * y),
            2 * (x * y + w * z),
            1 - 2 * (x * x + z * z),
            2 * (y * z - w * x),
            2 * (x * z - w * y),
            2 * (y * z + w * x),
            1 - 2 * (x * x + y * y),
        ],
        dim=-1,
    ).reshape(*q.shape[:-1], 3, 3)


class FrameDecoder(nn.Module):
    """
    MLP over concatenated latent pairs ``(z_i, z_{i+1})``; the windowed variant
    also sees ``z_{i-1}`` and ``z_{i+2}`` (zero-padded at chain ends).
    Output: 4 quaternion values then 3 translation values.
    """

    def __init__(self, d: int, hidden: int = 256, windowed: bool = False):
        super().__init__()
        self.d = d
        self.hidden = hidden
        self.windowed = windowed
        width = (4 if windowed else 2) * d
        self.net = nn.Sequential(
            nn.Linear(width, hidden),
            nn.SiLU(),
            nn.Linear(hidden, hidden),
            nn.SiLU(),
            nn.Linear(hidden, 7),
        )
        self.double()
        with torch.no_grad():
            self.net[-1].bias.copy_(torch.tensor([1.0, 0, 0, 0, 0, 0, 0]))

    def identity_init(self) -> "FrameDecoder":
        with torch.no_grad():
            for p in self.parameters():
                p.zero_()
            self.net[-1].bias[0] = 1.0
        return self

    def pair_inputs(self, latents: torch.Tensor) -> torch.Tensor:
        if latents.shape[-2] < 2:
            raise ShapeMismatch("Decoding needs at least 2 latents.")
        if not self.windowed:
            return torch.cat([latents[..., :-1, :], latents[..., 1:, :]], dim=-1)
        pad = torch.zeros_like(latents[..., :1, :])
        padded = torch.cat([pad, latents, pad], dim=-2)
        return torch.cat(
            [padded[..., :-3, :], padded[..., 1:-2, :], padded[..., 2:-1, :], padded[..., 3:, :]],
            dim=-1,
        )

    def forward(self, latents: torch.Tensor):
        """Returns ``(quaternions (..., L-1, 4), translations (..., L-1, 3))``."""
        out = self.net(self.pair_inputs(latents))
        return normalize_quaternion(out[..., :4]), out[..., 4:]

    @property
    def config(self) -> dict:
        return {"d": self.d, "hidden": self.hidden, "windowed": self.windowed}


def deltas_to_frames(quats: torch.Tensor, trans: torch.Tensor) -> BackboneFrames:
    rots = quaternion_to_matrix(quats.detach()).cpu().numpy()
    return BackboneFrames(rots, trans.detach().cpu().numpy())


@torch.no_grad()
def predict_relative_transforms(latents: torch.Tensor, decoder: FrameDecoder) -> List[RigidFrame]:
    decoder.eval()
    quats, trans = decoder(latents.to(torch.float64))
    return list(deltas_to_frames(quats, trans))


def assemble_frames(
    deltas: Union[BackboneFrames, Sequence[RigidFrame]], t_ref: RigidFrame
) -> BackboneFrames:
    """``frames[0] = t_ref``, ``frames[i+1] = frames[i] ∘ deltas[i]``."""
    if not isinstance(deltas, BackboneFrames):
        if len(deltas) == 0:
            raise ShapeMismatch("Frame assembly needs at least one relative transform.")
        deltas = BackboneFrames.from_frames(deltas)
    n = len(deltas) + 1
    rots = np.empty((n, 3, 3))
    trans = np.empty((n, 3))
    rots[0], trans[0] = t_ref.rot.m, t_ref.trans
    for i in range(n - 1):
        rots[i + 1] = rots[i] @ deltas.rots[i]
        trans[i + 1] = rots[i] @ deltas.trans[i] + trans[i]
    return BackboneFrames(rots, trans)


def canonical_reference() -> RigidFrame:
    """First residue at the origin with identity rotation."""
    return RigidFrame.identity()


def recenter(frames: BackboneFrames) -> BackboneFrames:
    return BackboneFrames(frames.rots, frames.trans - frames.trans.mean(axis=0))


@torch.no_grad()
def decode_latents(latents: torch.Tensor, decoder: FrameDecoder, t_ref: Optional[RigidFrame] = None) -> BackboneFrames:
    deltas = predict_relative_transforms(latents, decoder)
    if t_ref is not None:
        return assemble_frames(deltas, t_ref)
    return recenter(assemble_frames(deltas, canonical_reference()))


def decode_tokens(z: TokenSequence, cb: Codebook, decoder: FrameDecoder, t_ref: Optional[RigidFrame] = None) -> BackboneFrames:
    return decode_latents(embed(z, cb), decoder, t_ref)


def relative_targets(frames: BackboneFrames):
    """Quaternion (w >= 0) and translation targets for every adjacent pair."""
    rel = relative_frames(frames)
    quats = np.stack([Rotation(r).as_quaternion() for r in rel.rots])
    return quats, rel.trans.copy()


def frame_loss(q_pred, t_pred, q_true, t_true, rot_weight: float = 1.0, trans_weight: float = 1.0):
    """
    ``1 − ⟨q_p, q_t⟩²`` (sin² of half the geodesic angle) plus squared translation
    error, averaged over pairs.
    """
    rot = 1.0 - (q_pred * q_true).sum(dim=-1) ** 2
    tr = ((t_pred - t_true) ** 2).sum(dim=-1)
    return rot_weight * rot.mean() + trans_weight * tr.mean()


@dataclass
class DecoderFit:
    decoder: FrameDecoder
    codebook: Codebook
    losses: List[float] = field(default_factory=list)


def residue_tokens(frames: BackboneFrames, cb: Codebook) -> np.ndarray:
    """One token per residue; pooled tokens are repeated over their window."""
    z = tokenize(frames, cb).tokens
    return upsample_tokens(z, cb.pool, len(frames)) if cb.pool > 1 else z


def _gather_pairs(corpus, cb: Codebook, windowed: bool):
    """Token windows and targets for every adjacent pair in the corpus."""
    windows, quats, trans = [], [], []
    pad = -1
    for frames in corpus:
        if len(frames) < 2:
            continue
        z = residue_tokens(frames, cb)
        q, t = relative_targets(frames)
        L = len(z)
        padded = np.concatenate([[pad], z, [pad]])
        for i in range(L - 1):
            windows.append(padded[i : i + 4] if windowed else z[i : i + 2])
        quats.append(q)
        trans.append(t)
    if not windows:
        raise ConfigError("Decoder training needs a non-empty corpus.")
    return (
        torch.as_tensor(np.stack(windows), dtype=torch.long),
        torch.as_tensor(np.concatenate(quats)),
        torch.as_tensor(np.concatenate(trans)),
    )


def _lookup(table: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    # index -1 is the zero pad of the windowed decoder
    padded = torch.cat([table, torch.zeros_like(table[:1])], dim=0)
    idx = idx.masked_fill(idx < 0, table.shape[0])
    return padded[idx].flatten(start_dim=-2)


def train_decoder(
    corpus: Sequence[BackboneFrames],
    cb: Codebook,
    cfg: DecoderConfig,
    seed: int,
    decoder: Optional[FrameDecoder] = None,
    metrics_logger: Optional[logging.Logger] = None,
) -> DecoderFit:
    """
    Fit the pair decoder on relative-frame targets; codebook embeddings are
    fine-tuned jointly when ``cfg.finetune_embeddings`` is set.
    """
    windows, q_true, t_true = _gather_pairs(corpus, cb, cfg.windowed)

    torch.manual_seed(seed)
    if decoder is None:
        decoder = FrameDecoder(cb.d, cfg.hidden, cfg.windowed)
    table = nn.Parameter(torch.as_tensor(cb.embeddings.copy()), requires_grad=cfg.finetune_embeddings)

    params = list(decoder.parameters()) + ([table] if cfg.finetune_embeddings else [])
    optimizer = torch.optim.AdamW(params, lr=cfg.lr, betas=(0.9, 0.999), weight_decay=cfg.weight_decay)
    gen = torch.Generator().manual_seed(seed)
    n = windows.shape[0]
    losses: List[float] = []

    decoder.train()
    for step in range(cfg.steps):
        idx = torch.randint(n, (min(cfg.batch_size, n),), generator=gen)
        x = _lookup(table, windows[idx])
        out = decoder.net(x)
        q_pred = normalize_quaternion(out[:, :4])
        loss = frame_loss(q_pred, out[:, 4:], q_true[idx], t_true[idx], cfg.rot_weight, cfg.trans_weight)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(float(loss))
        if metrics_logger is not None and step % cfg.log_every == 0:
            metrics_logger.info(f"stage=decoder step={step} loss={float(loss):.6f} lr={cfg.lr:.3e}")
    decoder.eval()

    if cfg.steps:
        logger.info(f"Decoder trained {cfg.steps} steps: loss {losses[0]:.4f} -> {losses[-1]:.4f}")
    return DecoderFit(decoder=decoder, codebook=cb.with_embeddings(table.detach().numpy()), losses=losses)


def reconstruction_drift(frames: BackboneFrames, decoder: FrameDecoder, cb: Codebook) -> float:
    """Aligned Cα RMSD of the decoded structure against its source."""
    z = TokenSequence(residue_tokens(frames, cb))
    decoded = decode_tokens(z, cb, decoder, t_ref=frames[0])
    return aligned_rmsd(decoded.trans, frames.trans)[0]


@torch.no_grad()
def ipa_frames(latents: torch.Tensor, decoder: FrameDecoder, pool: int = 1, length: Optional[int] = None):
    """
    Frame tensors ``(rots, trans)`` for the IPA sub-layers, one per latent
    token. Pooled latents are expanded to ``length`` residues for decoding and
    the frame of each window's first residue is kept.
    """
    if pool == 1:
        frames = decode_latents(latents, decoder)
        return torch.from_numpy(frames.rots.copy()), torch.from_numpy(frames.trans.copy())
    length = length or latents.shape[0] * pool
    frames = decode_latents(latents.repeat_interleave(pool, dim=0)[:length], decoder)
    rots = torch.from_numpy(frames.rots[::pool].copy())
    trans = torch.from_numpy(frames.trans[::pool].copy())
    return rots, trans
