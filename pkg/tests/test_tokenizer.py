import numpy as np
import pytest
import torch

from tokenfold.domain import tokenizer
from tokenfold.domain.exceptions import ConfigError, ShapeMismatch
from tokenfold.domain.geometry import BackboneFrames, frames_from_atoms, left_compose, random_rigid
from tokenfold.domain.services.verify import random_backbone
from tokenfold.domain.tokenizer import (
    TokenSequence,
    embed,
    feature_dim,
    featurize,
    fit_codebook,
    nearest_rows,
    pool_features,
    quantization_error,
    tokenize,
    tokenize_features,
    tokenize_with_margin,
    upsample_tokens,
)


def test_feature_shape(rng):
    frames = frames_from_atoms(random_backbone(rng, 20))
    assert featurize(frames, 2).shape == (20, feature_dim(2))
    assert featurize(frames, 3).shape == (20, feature_dim(3))


def test_featurize_needs_two_residues(rng):
    frames = frames_from_atoms(random_backbone(rng, 4))
    with pytest.raises(ShapeMismatch):
        featurize(BackboneFrames(frames.rots[:1], frames.trans[:1]))
    with pytest.raises(ConfigError):
        featurize(frames, 0)


def test_chain_end_sentinels(rng):
    f = featurize(frames_from_atoms(random_backbone(rng, 6)), 2)
    # first residue has no i-2, i-1 neighbours
    assert f[0, 0] == -1.0 and f[0, 1] == -1.0
    assert f[-1, 2] == -1.0 and f[-1, 3] == -1.0
    assert np.all(f[1:, 1] > 0)


def test_featurize_is_invariant(rng):
    frames = frames_from_atoms(random_backbone(rng, 30))
    base = featurize(frames)
    for _ in range(10):
        moved = left_compose(random_rigid(rng, 50.0), frames)
        np.testing.assert_allclose(featurize(moved), base, atol=1e-9)


def test_tokens_are_invariant(codebook, rng):
    frames = frames_from_atoms(random_backbone(rng, 40))
    tokens, gap = tokenize_with_margin(frames, codebook)
    for _ in range(10):
        moved, gap2 = tokenize_with_margin(left_compose(random_rigid(rng), frames), codebook)
        keep = (gap > 1e-6) & (gap2 > 1e-6)
        np.testing.assert_array_equal(tokens.tokens[keep], moved.tokens[keep])


def test_codebook_shape_and_usage(codebook, corpus, session_cfg):
    assert codebook.K == session_cfg.tokenizer.K
    assert codebook.d == session_cfg.tokenizer.d
    assigned = np.concatenate([tokenize_features(featurize(f), codebook)[0] for f, _ in corpus])
    assert set(np.unique(assigned)) == set(range(codebook.K))
    assert codebook.min_centroid_gap() > 0


def test_fit_is_deterministic(corpus):
    features = [featurize(f) for f, _ in corpus[:6]]
    a = fit_codebook(features, K=4, seed=3, d=4)
    b = fit_codebook(features, K=4, seed=3, d=4)
    np.testing.assert_array_equal(a.centroids, b.centroids)
    np.testing.assert_array_equal(a.embeddings, b.embeddings)


def test_fit_beats_random_centroids(corpus):
    features = [featurize(f) for f, _ in corpus[:6]]
    cb = fit_codebook(features, K=4, seed=0, d=4)
    X = cb.scale(np.concatenate(features))
    rng = np.random.default_rng(0)
    random_cb = cb.__class__(
        centroids=X[rng.choice(len(X), 4, replace=False)],
        embeddings=cb.embeddings,
        scaler_mean=cb.scaler_mean,
        scaler_scale=cb.scaler_scale,
    )
    fitted = sum(quantization_error(f, cb) for f in features)
    baseline = sum(quantization_error(f, random_cb) for f in features)
    assert fitted <= baseline


def test_fit_without_reseed_rounds(corpus):
    features = [featurize(f) for f, _ in corpus[:6]]
    cb = fit_codebook(features, K=4, seed=3, d=4, max_reseed_rounds=0)
    np.testing.assert_array_equal(cb.centroids, fit_codebook(features, K=4, seed=3, d=4).centroids)


class _DeadSlotKMeans:
    """First fit leaves one centroid far from every row; refits keep the given init."""

    def __init__(self, n_clusters, init, **kwargs):
        self.n_clusters = n_clusters
        self.init = init

    def fit(self, X):
        if isinstance(self.init, str):
            centers = np.unique(X, axis=0)[: self.n_clusters].copy()
            centers[-1] = 1e6
        else:
            centers = np.asarray(self.init, dtype=np.float64)
        self.cluster_centers_ = centers
        return self


def test_last_reseed_round_is_checked(corpus, monkeypatch):
    monkeypatch.setattr(tokenizer, "KMeans", _DeadSlotKMeans)
    features = [featurize(f) for f, _ in corpus[:6]]
    cb = fit_codebook(features, K=4, seed=0, d=4, max_reseed_rounds=1)
    assigned = np.concatenate([tokenize_features(f, cb)[0] for f in features])
    assert set(np.unique(assigned)) == set(range(4))
    with pytest.raises(ConfigError):
        fit_codebook(features, K=4, seed=0, d=4, max_reseed_rounds=0)


def test_fit_rejects_small_corpus(rng):
    features = [featurize(frames_from_atoms(random_backbone(rng, 10)))]
    with pytest.raises(ConfigError):
        fit_codebook(features, K=8, seed=0)
    with pytest.raises(ConfigError):
        fit_codebook([], K=2, seed=0)


def test_nearest_rows_breaks_ties_low():
    rows = np.array([[1.0, 0.0], [-1.0, 0.0]])
    idx, gap = nearest_rows(np.array([[0.0, 0.0], [0.9, 0.0]]), rows)
    assert idx.tolist() == [0, 0]
    assert gap[0] == 0.0
    assert gap[1] == pytest.approx(1.8)


def test_pool_and_upsample():
    f = np.arange(10, dtype=float).reshape(5, 2)
    pooled = pool_features(f, 2)
    assert pooled.shape == (3, 2)
    np.testing.assert_array_equal(pooled[-1], f[-1])
    assert upsample_tokens(np.array([4, 7, 9]), 2, 5).tolist() == [4, 4, 7, 7, 9]


def test_token_text_format():
    z = TokenSequence([3, 0, 12])
    assert z.to_text() == "3 0 12"
    assert TokenSequence.from_text("3 0 12") == z


def test_embed(codebook, corpus):
    z = tokenize(corpus[0][0], codebook)
    x = embed(z, codebook)
    assert x.dtype == torch.float64
    assert tuple(x.shape) == (len(z), codebook.d)
    with pytest.raises(ConfigError):
        embed(TokenSequence([codebook.K]), codebook)
