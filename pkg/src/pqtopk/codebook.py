"""Product-quantisation codebooks from dense item embeddings (per-split k-means)."""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .core import (
    CODE_DTYPE,
    MAX_SUB_IDS,
    REAL_DTYPE,
    Codebook,
    PQConfig,
    SubItemEmbeddings,
    ValidationError,
)
from .scoring import DenseEmbeddingMatrix

log = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 25


@dataclass(frozen=True)
class QuantisationReport:
    """Reconstruction error of a built codebook.

    split_mse[k] is the mean over items of the squared error in split k, so
    total_mse is their sum and equals the mean of item_sq_errors.
    mse_history[k] holds split k's error after each assignment step.
    """

    split_mse: Tuple[float, ...]
    total_mse: float
    iterations: Tuple[int, ...]
    item_sq_errors: np.ndarray
    mse_history: Tuple[Tuple[float, ...], ...]


def compression_ratio(config: PQConfig) -> float:
    """Dense float32 table size divided by codes (u16) plus sub-id table size."""
    pq_bytes = config.code_bytes + config.sub_embedding_bytes
    return config.dense_bytes / pq_bytes


def _sq_dists(X: np.ndarray, x_sq: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = x_sq[:, None] - 2.0 * (X @ C.T) + np.einsum("ij,ij->i", C, C)[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def _seed_centroids(X: np.ndarray, b: int, rng: np.random.Generator) -> np.ndarray:
    """Distance-weighted (k-means++) seeding."""
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    closest = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, b):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # every point already coincides with a centroid
            idx = int(rng.integers(n))
        chosen.append(idx)
        np.minimum(closest, ((X - X[idx]) ** 2).sum(axis=1), out=closest)
    return X[chosen].copy()


def _assign(X, x_sq, C):
    d = _sq_dists(X, x_sq, C)
    labels = d.argmin(axis=1)
    return labels, d[np.arange(X.shape[0]), labels]


def _kmeans_split(X: np.ndarray, b: int, max_iters: int, seed_seq: np.random.SeedSequence):
    rng = np.random.default_rng(seed_seq)
    X = X.astype(np.float64)
    n = X.shape[0]
    x_sq = np.einsum("ij,ij->i", X, X)
    C = _seed_centroids(X, b, rng)
    labels, err = _assign(X, x_sq, C)
    history = [float(err.mean())]
    iters = 0
    for _ in range(max_iters):
        iters += 1
        counts = np.bincount(labels, minlength=b)
        sums = np.zeros_like(C)
        np.add.at(sums, labels, X)
        nonempty = counts > 0
        C[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if empty.size:
            # re-seed each empty cluster at the currently worst-served point
            far = np.argsort(-err, kind="stable")[: empty.size]
            C[empty] = X[far]
            err[far] = 0.0
        new_labels, err = _assign(X, x_sq, C)
        history.append(float(err.mean()))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    # final codes must be optimal for the float32 centroids actually stored
    C32 = C.astype(REAL_DTYPE)
    labels, err = _assign(X, x_sq, C32.astype(np.float64))
    diff = X - C32.astype(np.float64)[labels]
    err = np.einsum("ij,ij->i", diff, diff)
    return labels.astype(CODE_DTYPE), C32, err, iters, tuple(history)


def build_pq_codebook(
    W: DenseEmbeddingMatrix | np.ndarray,
    m: int,
    b: int,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
    threads: Optional[int] = None,
) -> Tuple[Codebook, SubItemEmbeddings, QuantisationReport]:
    """Quantise each of the m column blocks of W with its own b-centroid k-means.

    Output is deterministic for fixed (W, m, b, max_iters, seed): every split
    draws from its own child of the seed, so the thread count does not matter.
    """
    if not isinstance(W, DenseEmbeddingMatrix):
        if np.asarray(W).size == 0:
            raise ValidationError("empty embedding matrix")
        W = DenseEmbeddingMatrix(W)
    if b > MAX_SUB_IDS:
        raise ValidationError(f"num_sub_ids={b} exceeds {MAX_SUB_IDS} (16-bit codes)")
    if max_iters < 0:
        raise ValidationError("max_iters must be >= 0")
    n, d = W.W.shape
    config = PQConfig(n, m, b, d)
    if b > n:
        warnings.warn(f"b={b} exceeds the number of items ({n}); some sub-ids will duplicate", stacklevel=2)
    w = config.sub_dim
    children = np.random.SeedSequence(seed).spawn(m)
    blocks = [W.W[:, k * w : (k + 1) * w] for k in range(m)]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        results: List = list(pool.map(_kmeans_split, blocks, [b] * m, [max_iters] * m, children))

    codes = np.stack([r[0] for r in results], axis=1)
    table = np.stack([r[1] for r in results])
    item_err = np.sum([r[2] for r in results], axis=0)
    split_mse = tuple(float(r[2].mean()) for r in results)
    report = QuantisationReport(
        split_mse=split_mse,
        total_mse=float(sum(split_mse)),
        iterations=tuple(r[3] for r in results),
        item_sq_errors=item_err,
        mse_history=tuple(r[4] for r in results),
    )
    log.info("built %d-split codebook, b=%d, total MSE %.6g", m, b, report.total_mse)
    return Codebook(config, codes), SubItemEmbeddings(config, table), report
