import numpy as np
import pytest
import torch

from tokenfold.domain.decoder import (
    FrameDecoder,
    assemble_frames,
    decode_latents,
    decode_tokens,
    frame_loss,
    ipa_frames,
    normalize_quaternion,
    quaternion_to_matrix,
    reconstruction_drift,
    relative_targets,
    train_decoder,
)
from tokenfold.domain.exceptions import ShapeMismatch
from tokenfold.domain.geometry import (
    compose,
    frame_errors,
    frames_from_atoms,
    left_compose,
    random_rigid,
    random_rotation,
    relative_frames,
)
from tokenfold.domain.models.config import DecoderConfig
from tokenfold.domain.services.verify import random_backbone
from tokenfold.domain.tokenizer import tokenize


@pytest.mark.parametrize("length", [2, 8, 64])
def test_assembly_reproduces_frames(rng, length):
    frames = frames_from_atoms(random_backbone(rng, length))
    rebuilt = assemble_frames(relative_frames(frames), frames[0])
    assert max(frame_errors(rebuilt, frames)) < 1e-8


def test_assembly_is_equivariant_in_reference(rng):
    frames = frames_from_atoms(random_backbone(rng, 40))
    g = random_rigid(rng)
    rebuilt = assemble_frames(relative_frames(frames), compose(g, frames[0]))
    assert max(frame_errors(rebuilt, left_compose(g, frames))) < 1e-8


def test_assembly_accepts_frame_lists(rng):
    frames = frames_from_atoms(random_backbone(rng, 5))
    rebuilt = assemble_frames(list(relative_frames(frames)), frames[0])
    assert len(rebuilt) == 5
    with pytest.raises(ShapeMismatch):
        assemble_frames([], frames[0])


def test_quaternion_matrix_agrees_with_rotation(rng):
    r = random_rotation(rng)
    q = torch.from_numpy(r.as_quaternion())
    np.testing.assert_allclose(quaternion_to_matrix(q).numpy(), r.m, atol=1e-12)


def test_normalize_quaternion_sign():
    q = normalize_quaternion(torch.tensor([[-2.0, 0.0, 0.0, 0.0]], dtype=torch.float64))
    torch.testing.assert_close(q, torch.tensor([[1.0, 0.0, 0.0, 0.0]], dtype=torch.float64))


@pytest.mark.parametrize("windowed", [False, True])
def test_decoder_output_shapes(windowed):
    torch.manual_seed(0)
    dec = FrameDecoder(d=6, hidden=16, windowed=windowed)
    q, t = dec(torch.randn(9, 6, dtype=torch.float64))
    assert tuple(q.shape) == (8, 4) and tuple(t.shape) == (8, 3)
    torch.testing.assert_close(q.norm(dim=-1), torch.ones(8, dtype=torch.float64))
    assert torch.all(q[:, 0] >= 0)


def test_decoder_needs_two_latents():
    dec = FrameDecoder(d=4, hidden=8)
    with pytest.raises(ShapeMismatch):
        dec(torch.zeros(1, 4, dtype=torch.float64))


def test_identity_decoder_stacks_frames_at_one_point():
    dec = FrameDecoder(d=4, hidden=8).identity_init()
    frames = decode_latents(torch.randn(6, 4, dtype=torch.float64), dec)
    np.testing.assert_allclose(frames.rots, np.broadcast_to(np.eye(3), (6, 3, 3)), atol=1e-12)
    np.testing.assert_allclose(frames.trans, 0.0, atol=1e-12)


def test_decode_recenters_without_reference():
    torch.manual_seed(1)
    dec = FrameDecoder(d=4, hidden=8)
    frames = decode_latents(torch.randn(10, 4, dtype=torch.float64), dec)
    np.testing.assert_allclose(frames.trans.mean(axis=0), 0.0, atol=1e-10)


def test_frame_loss_zero_on_targets(rng):
    q, t = relative_targets(frames_from_atoms(random_backbone(rng, 8)))
    q, t = torch.from_numpy(q), torch.from_numpy(t)
    assert float(frame_loss(q, t, q, t)) == pytest.approx(0.0, abs=1e-12)
    assert float(frame_loss(-q, t, q, t)) == pytest.approx(0.0, abs=1e-12)


def test_training_reduces_loss(codebook, corpus):
    cfg = DecoderConfig(hidden=32, steps=150, batch_size=64, lr=3e-3)
    fit = train_decoder([f for f, _ in corpus], codebook, cfg, seed=0)
    assert len(fit.losses) == 150
    assert np.mean(fit.losses[-10:]) < np.mean(fit.losses[:10])
    # embeddings were fine-tuned, shape kept
    assert fit.codebook.embeddings.shape == codebook.embeddings.shape


def test_training_is_deterministic(codebook, corpus):
    cfg = DecoderConfig(hidden=8, steps=5, batch_size=16)
    a = train_decoder([f for f, _ in corpus[:4]], codebook, cfg, seed=5)
    b = train_decoder([f for f, _ in corpus[:4]], codebook, cfg, seed=5)
    assert a.losses == b.losses


def test_decode_tokens_and_drift(models, corpus):
    frames = corpus[0][0]
    z = tokenize(frames, models.codebook)
    decoded = decode_tokens(z, models.codebook, models.decoder)
    assert len(decoded) == len(frames)
    assert np.isfinite(reconstruction_drift(frames, models.decoder, models.codebook))


def test_ipa_frames_pooled():
    torch.manual_seed(0)
    dec = FrameDecoder(d=4, hidden=8)
    latents = torch.randn(5, 4, dtype=torch.float64)
    rots, trans = ipa_frames(latents, dec, pool=2, length=9)
    assert tuple(rots.shape) == (5, 3, 3) and tuple(trans.shape) == (5, 3)
    rots1, _ = ipa_frames(latents, dec)
    assert tuple(rots1.shape) == (5, 3, 3)
