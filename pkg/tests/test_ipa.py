import numpy as np
import pytest
import torch

from tokenfold.domain.exceptions import CacheInvalid, ShapeMismatch
from tokenfold.domain.geometry import frames_from_atoms, left_compose, random_rigid
from tokenfold.domain.ipa import (
    ActivityMask,
    IPACache,
    IPACacheSet,
    InvariantPointAttention,
    OpCounter,
    compute_mask,
    count_report,
    frames_to_tensors,
    ipa_cached,
    ipa_full,
    resident_bytes,
)
from tokenfold.domain.models.config import IPAConfig
from tokenfold.domain.services.verify import random_backbone

D = 16


@pytest.fixture
def module():
    torch.manual_seed(0)
    return InvariantPointAttention(D, IPAConfig(n_heads=2, d_head=4, n_query_points=3, n_value_points=2)).eval()


@pytest.fixture
def frames(rng):
    return frames_from_atoms(random_backbone(rng, 12))


@torch.no_grad()
def test_output_is_invariant_to_global_motion(module, frames, rng):
    x = torch.from_numpy(rng.normal(size=(1, 12, D)))
    r, t = frames_to_tensors(frames)
    base = module(x, r[None], t[None])
    for _ in range(5):
        mr, mt = frames_to_tensors(left_compose(random_rigid(rng), frames))
        torch.testing.assert_close(module(x, mr[None], mt[None]), base, atol=1e-9, rtol=0)


def test_compute_mask():
    z = torch.zeros(4, 2, dtype=torch.float64)
    assert compute_mask(z, None, 0.1).all_active
    moved = z.clone()
    moved[1, 0] = 0.1
    moved[2, 0] = 0.3
    mask = compute_mask(moved, z, 0.1)
    # strictly greater than eps
    assert mask.bits.tolist() == [False, False, True, False]
    assert mask.rho == pytest.approx(0.25)
    with pytest.raises(ShapeMismatch):
        compute_mask(z, z[:3], 0.1)


@torch.no_grad()
def test_full_recompute_counts(module, frames, rng):
    z = torch.from_numpy(rng.normal(size=(12, D)))
    r, t = frames_to_tensors(frames)
    out, cache, counter = ipa_full(z, r, t, module)
    assert tuple(out.shape) == (12, D)
    assert cache.valid and counter.pair_updates == 144
    torch.testing.assert_close(cache.dist, cache.dist.transpose(-1, -2), atol=0, rtol=0)
    assert torch.all(torch.diagonal(cache.dist, dim1=-2, dim2=-1) == 0)
    assert resident_bytes(cache) > 0


@torch.no_grad()
def test_all_active_matches_full_exactly(module, frames, rng):
    z = torch.from_numpy(rng.normal(size=(12, D)))
    r, t = frames_to_tensors(frames)
    full, _, _ = ipa_full(z, r, t, module)
    cached, _, _ = ipa_cached(z, r, t, ActivityMask.full(12), IPACache(), module)
    assert torch.equal(full, cached)


@torch.no_grad()
def test_unchanged_stale_tokens_give_full_result(module, frames, rng):
    z = torch.from_numpy(rng.normal(size=(12, D)))
    r, t = frames_to_tensors(frames)
    _, cache, _ = ipa_full(z, r, t, module)
    bits = np.zeros(12, dtype=bool)
    bits[[2, 5, 9]] = True
    z_new = z.clone()
    z_new[torch.from_numpy(bits)] += 1.0
    cached, merged, counter = ipa_cached(z_new, r, t, ActivityMask(bits), cache, module)
    full, fresh, _ = ipa_full(z_new, r, t, module)
    torch.testing.assert_close(cached, full, atol=1e-10, rtol=0)
    torch.testing.assert_close(merged.dist, fresh.dist, atol=1e-10, rtol=0)
    assert counter.pair_updates == 2 * 3 * 12 - 9


@torch.no_grad()
def test_pair_counts(module, frames, rng):
    r, t = frames_to_tensors(frames)
    z = torch.from_numpy(rng.normal(size=(12, D)))
    _, cache, _ = ipa_full(z, r, t, module)
    for a in (1, 3, 6, 11):
        bits = np.zeros(12, dtype=bool)
        bits[rng.choice(12, size=a, replace=False)] = True
        mask = ActivityMask(bits)
        _, cache, counter = ipa_cached(z, r, t, mask, cache, module)
        assert counter.pair_updates == 2 * a * 12 - a * a
        assert count_report(counter, mask)["matches"]


@torch.no_grad()
def test_no_active_tokens_reuses_output(module, frames, rng):
    z = torch.from_numpy(rng.normal(size=(12, D)))
    r, t = frames_to_tensors(frames)
    out, cache, _ = ipa_full(z, r, t, module)
    again, _, counter = ipa_cached(z, r, t, ActivityMask(np.zeros(12, dtype=bool)), cache, module)
    assert again is out
    assert counter.pair_updates == 0


@torch.no_grad()
def test_partial_update_needs_valid_cache(module, frames, rng):
    z = torch.from_numpy(rng.normal(size=(12, D)))
    r, t = frames_to_tensors(frames)
    bits = np.zeros(12, dtype=bool)
    bits[0] = True
    with pytest.raises(CacheInvalid):
        ipa_cached(z, r, t, ActivityMask(bits), IPACache(), module)
    with pytest.raises(ShapeMismatch):
        ipa_cached(z, r, t, ActivityMask(bits[:5]), IPACache(), module)


def test_op_counter_budget():
    with pytest.raises(ShapeMismatch):
        OpCounter(pair_updates=10, projection_ops=0, full_pair_budget=9)


def test_cache_set_is_keyed_by_branch_and_layer():
    caches = IPACacheSet()
    a = caches.get("cond", 0)
    assert caches.get("cond", 0) is a
    assert caches.get("uncond", 0) is not a
    assert caches.resident_bytes() == 0


@torch.no_grad()
def test_cache_is_rebuilt_when_frames_move(module, frames, rng):
    z = torch.from_numpy(rng.normal(size=(12, D)))
    r0, t0 = frames_to_tensors(frames)
    r1, t1 = frames_to_tensors(frames_from_atoms(random_backbone(rng, 12)))
    _, cache, _ = ipa_full(z, r0, t0, module)
    expected, _, _ = ipa_full(z, r1, t1, module)

    idle, rebuilt, counter = ipa_cached(z, r1, t1, ActivityMask(np.zeros(12, dtype=bool)), cache, module)
    torch.testing.assert_close(idle, expected, atol=1e-12, rtol=0)
    assert counter.pair_updates == 144
    assert torch.equal(rebuilt.prev_rots, r1) and torch.equal(rebuilt.prev_trans, t1)

    bits = np.zeros(12, dtype=bool)
    bits[3] = True
    moved = z.clone()
    moved[3] += 0.5
    one, _, _ = ipa_cached(moved, r1, t1, ActivityMask(bits), cache, module)
    full, _, _ = ipa_full(moved, r1, t1, module)
    torch.testing.assert_close(one, full, atol=1e-12, rtol=0)


@torch.no_grad()
def test_unchanged_frames_reuse_cache(module, frames, rng):
    z = torch.from_numpy(rng.normal(size=(12, D)))
    r, t = frames_to_tensors(frames)
    out, cache, _ = ipa_full(z, r, t, module)
    again, _, counter = ipa_cached(z, r.clone(), t.clone(), ActivityMask(np.zeros(12, dtype=bool)), cache, module)
    assert counter.pair_updates == 0
    assert torch.equal(again, out)
