"""
SE(3)-invariant featurization and vector-quantized structural tokens.

Per residue ``i`` with window ``w`` the feature row holds:

- Cα distances to ``i-w .. i-1, i+1 .. i+w`` (sentinel ``-1`` out of chain),
- the 9 entries of ``R_iᵀ R_j`` for ``j`` in ``i-2, i-1, i+1, i+2`` (sentinel 0),
- the local displacement ``R_iᵀ (t_j - t_i)`` for ``j = i±1`` (sentinel 0).
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Sequence, Tuple

import numpy as np
import torch
from sklearn.cluster import KMeans

from .exceptions import ConfigError, ShapeMismatch
from .geometry import BackboneFrames

logger = logging.getLogger(__name__)

ROTATION_OFFSETS = (-2, -1, 1, 2)
DISPLACEMENT_OFFSETS = (-1, 1)
DISTANCE_SENTINEL = -1.0
MIN_ROWS_PER_CENTROID = 10
DUPLICATE_TOL = 1e-9
CHUNK = 4096


def feature_dim(window: int) -> int:
    return 2 * window + 9 * len(ROTATION_OFFSETS) + 3 * len(DISPLACEMENT_OFFSETS)


def _offsets(window: int) -> List[int]:
    return [o for o in range(-window, window + 1) if o != 0]


def featurize(frames: BackboneFrames, window: int = 2) -> np.ndarray:
    L = len(frames)
    if L < 2:
        raise ShapeMismatch(f"Featurization needs L >= 2, got {L}.")
    if window < 1:
        raise ConfigError(f"Feature window must be >= 1, got {window}.")

    rots, trans = frames.rots, frames.trans
    idx = np.arange(L)
    blocks = []

    dist = np.full((L, 2 * window), DISTANCE_SENTINEL)
    for k, o in enumerate(_offsets(window)):
        j = idx + o
        ok = (j >= 0) & (j < L)
        dist[ok, k] = np.linalg.norm(trans[j[ok]] - trans[idx[ok]], axis=1)
    blocks.append(dist)

    for o in ROTATION_OFFSETS:
        rel = np.zeros((L, 9))
        j = idx + o
        ok = (j >= 0) & (j < L)
        rel[ok] = np.einsum("lji,ljk->lik", rots[idx[ok]], rots[j[ok]]).reshape(-1, 9)
        blocks.append(rel)

    for o in DISPLACEMENT_OFFSETS:
        disp = np.zeros((L, 3))
        j = idx + o
        ok = (j >= 0) & (j < L)
        disp[ok] = np.einsum("lji,lj->li", rots[idx[ok]], trans[j[ok]] - trans[idx[ok]])
        blocks.append(disp)

    return np.concatenate(blocks, axis=1)


def pool_features(features: np.ndarray, k: int) -> np.ndarray:
    """Mean over consecutive windows of ``k`` residues; the last window may be shorter."""
    if k < 1:
        raise ConfigError(f"Pooling factor must be >= 1, got {k}.")
    if k == 1:
        return features
    n = -(-features.shape[0] // k)
    return np.stack([features[i * k : (i + 1) * k].mean(axis=0) for i in range(n)])


def upsample_tokens(tokens: np.ndarray, k: int, length: int) -> np.ndarray:
    return np.repeat(np.asarray(tokens), k)[:length]


@dataclass(frozen=True, eq=False)
class Codebook:
    centroids: np.ndarray
    embeddings: np.ndarray
    scaler_mean: np.ndarray
    scaler_scale: np.ndarray
    window: int = 2
    pool: int = 1

    def __post_init__(self):
        K, F = self.centroids.shape
        if self.embeddings.shape[0] != K:
            raise ShapeMismatch(f"{K} centroids but {self.embeddings.shape[0]} embeddings.")
        if self.scaler_mean.shape != (F,) or self.scaler_scale.shape != (F,):
            raise ShapeMismatch("Scaler does not match the feature dimension.")
        if not np.all(np.isfinite(self.embeddings)):
            raise ConfigError("Codebook embeddings must be finite.")

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    @property
    def F(self) -> int:
        return self.centroids.shape[1]

    @property
    def d(self) -> int:
        return self.embeddings.shape[1]

    def scale(self, features: np.ndarray) -> np.ndarray:
        return (features - self.scaler_mean) / self.scaler_scale

    def with_embeddings(self, embeddings: np.ndarray) -> "Codebook":
        return replace(self, embeddings=np.asarray(embeddings, dtype=np.float64))

    def min_centroid_gap(self) -> float:
        if self.K < 2:
            return float("inf")
        d2 = _sq_distances(self.centroids, self.centroids)
        np.fill_diagonal(d2, np.inf)
        return float(np.sqrt(d2.min()))


@dataclass(frozen=True, eq=False)
class TokenSequence:
    tokens: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        object.__setattr__(self, "tokens", np.asarray(self.tokens, dtype=np.int64).reshape(-1))

    def __len__(self) -> int:
        return self.tokens.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, TokenSequence) and np.array_equal(self.tokens, other.tokens)

    def to_text(self) -> str:
        return " ".join(str(int(t)) for t in self.tokens)

    @classmethod
    def from_text(cls, text: str) -> "TokenSequence":
        return cls(np.array([int(t) for t in text.split()], dtype=np.int64))


def _sq_distances(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    # explicit differences so equidistant ties compare exactly equal
    out = np.empty((x.shape[0], c.shape[0]))
    for s in range(0, x.shape[0], CHUNK):
        diff = x[s : s + CHUNK, None, :] - c[None, :, :]
        out[s : s + CHUNK] = np.einsum("nkf,nkf->nk", diff, diff)
    return out


def nearest_rows(x: np.ndarray, rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Index of the nearest row (ties → lowest index) and the nearest/second-nearest gap."""
    d2 = _sq_distances(x, rows)
    first = np.argmin(d2, axis=1)
    if rows.shape[0] < 2:
        return first, np.full(x.shape[0], np.inf)
    part = np.sqrt(np.partition(d2, 1, axis=1)[:, :2])
    return first, part[:, 1] - part[:, 0]


def _embedding_projection(F: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Fixed random map F → d with orthonormal columns (F >= d) or rows (F < d)."""
    if F >= d:
        q, _ = np.linalg.qr(rng.standard_normal((F, d)))
        return q
    q, _ = np.linalg.qr(rng.standard_normal((d, F)))
    return q.T


def project_embeddings(centroids: np.ndarray, d: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    emb = centroids @ _embedding_projection(centroids.shape[1], d, rng)
    emb = emb - emb.mean(axis=0)
    std = emb.std()
    return emb / std if std > 0 else emb


def _dead_centroids(Xs: np.ndarray, centroids: np.ndarray, K: int):
    assign, _ = nearest_rows(Xs, centroids)
    return assign, np.flatnonzero(np.bincount(assign, minlength=K) == 0)


def fit_codebook(
    corpus_features: Sequence[np.ndarray],
    K: int,
    seed: int,
    d: int = 128,
    window: int = 2,
    pool: int = 1,
    max_iter: int = 200,
    tol: float = 1e-6,
    max_reseed_rounds: int = 10,
) -> Codebook:
    if not corpus_features:
        raise ConfigError("Codebook fitting needs a non-empty corpus.")
    X = np.concatenate([pool_features(np.asarray(f, dtype=np.float64), pool) for f in corpus_features])
    if X.shape[0] < MIN_ROWS_PER_CENTROID * K:
        raise ConfigError(
            f"Codebook of size {K} needs at least {MIN_ROWS_PER_CENTROID * K} residues, got {X.shape[0]}."
        )

    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    Xs = (X - mean) / scale

    if np.unique(Xs, axis=0).shape[0] < K:
        raise ConfigError(f"Corpus has fewer than {K} distinct feature rows.")

    km = KMeans(n_clusters=K, init="k-means++", n_init=1, max_iter=max_iter, tol=tol, random_state=seed)
    centroids = km.fit(Xs).cluster_centers_

    reseeded = 0
    for _ in range(max_reseed_rounds):
        assign, dead = _dead_centroids(Xs, centroids, K)
        if dead.size == 0:
            break
        # farthest points from their current centroid seed the dead slots
        resid = np.sum((Xs - centroids[assign]) ** 2, axis=1)
        order = np.argsort(-resid, kind="stable")
        centroids = centroids.copy()
        centroids[dead] = Xs[order[: dead.size]]
        reseeded += int(dead.size)
        km = KMeans(n_clusters=K, init=centroids, n_init=1, max_iter=max_iter, tol=tol, random_state=seed)
        centroids = km.fit(Xs).cluster_centers_

    if _dead_centroids(Xs, centroids, K)[1].size:
        raise ConfigError("Could not eliminate dead centroids; reduce K or enlarge the corpus.")

    if reseeded:
        logger.warning(f"Re-seeded {reseeded} dead centroids while fitting K={K}")

    cb = Codebook(
        centroids=centroids,
        embeddings=project_embeddings(centroids, d, seed),
        scaler_mean=mean,
        scaler_scale=scale,
        window=window,
        pool=pool,
    )
    if cb.min_centroid_gap() <= DUPLICATE_TOL:
        raise ConfigError("Fitted codebook has duplicate centroids.")
    logger.info(f"Fitted codebook K={K} F={cb.F} d={d} on {X.shape[0]} residues")
    return cb


def tokenize_features(features: np.ndarray, cb: Codebook) -> Tuple[np.ndarray, np.ndarray]:
    pooled = pool_features(features, cb.pool)
    return nearest_rows(cb.scale(pooled), cb.centroids)


def tokenize_with_margin(frames: BackboneFrames, cb: Codebook) -> Tuple[TokenSequence, np.ndarray]:
    tokens, gap = tokenize_features(featurize(frames, cb.window), cb)
    return TokenSequence(tokens), gap


def tokenize(frames: BackboneFrames, cb: Codebook) -> TokenSequence:
    return tokenize_with_margin(frames, cb)[0]


def quantization_error(features: np.ndarray, cb: Codebook) -> float:
    xs = cb.scale(pool_features(features, cb.pool))
    return float(_sq_distances(xs, cb.centroids).min(axis=1).sum())


def embed(z: TokenSequence, cb: Codebook) -> torch.Tensor:
    tokens = z.tokens
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cb.K):
        raise ConfigError(f"Token out of range [0, {cb.K}).")
    return torch.from_numpy(cb.embeddings[tokens].copy())
