"""Item scoring: PQTopK, the RecJPQ accumulator baseline, and dense matmul.

All three paths return a :class:`~pqtopk.core.TopKResult` with the same
ranking contract (score descending, ties by ascending item id), so results
can be compared directly.
"""

from __future__ import annotations

import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Union

import numpy as np

from . import _kernels
from .core import (
    REAL_DTYPE,
    Codebook,
    MemoryBudgetError,
    SequenceEmbedding,
    SubIdScoreMatrix,
    SubItemEmbeddings,
    TopKResult,
    ValidationError,
    _first_nonfinite,
    _frozen,
    default_memory_budget,
)

DEFAULT_CHUNK = 8192

_EMPTY_IDS = np.empty(0, dtype=np.int64)


# -- thread pool ---------------------------------------------------------------

_threads: Optional[int] = None
_pools: Dict[int, ThreadPoolExecutor] = {}
_pool_lock = threading.Lock()


def max_threads() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # not available on macOS
        return os.cpu_count() or 1


def set_threads(n: Optional[int]) -> None:
    """Set the default worker count for pq_topk (None restores all cores)."""
    global _threads
    if n is not None and n < 1:
        raise ValueError("thread count must be >= 1")
    _threads = n


def get_threads() -> int:
    return _threads if _threads is not None else max_threads()


def _pool(n: int) -> ThreadPoolExecutor:
    with _pool_lock:
        pool = _pools.get(n)
        if pool is None:
            pool = _pools[n] = ThreadPoolExecutor(max_workers=n, thread_name_prefix="pqtopk")
        return pool


# -- types ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ItemSubset:
    """Items to score: ``ids is None`` means the whole catalogue."""

    ids: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.ids is not None:
            ids = np.array(self.ids, dtype=np.int64, copy=True).reshape(-1)
            if ids.size > 1 and not np.all(ids[1:] > ids[:-1]):
                raise ValidationError("explicit item ids must be strictly increasing")
            if ids.size and ids[0] < 0:
                raise ValidationError(f"item id {ids[0]} is negative")
            object.__setattr__(self, "ids", _frozen(ids))

    @classmethod
    def all(cls) -> "ItemSubset":
        return cls(None)

    @classmethod
    def explicit(cls, ids: Sequence[int]) -> "ItemSubset":
        return cls(np.asarray(ids, dtype=np.int64))

    @property
    def is_all(self) -> bool:
        return self.ids is None

    def size(self, num_items: int) -> int:
        return num_items if self.ids is None else self.ids.shape[0]

    def check(self, num_items: int) -> None:
        if self.ids is not None and self.ids.size and self.ids[-1] >= num_items:
            raise ValidationError(f"item id {self.ids[-1]} out of range for {num_items} items")


SubsetLike = Union[ItemSubset, Sequence[int], np.ndarray, None]


def _as_subset(subset: SubsetLike, num_items: int) -> ItemSubset:
    if subset is None:
        subset = ItemSubset.all()
    elif not isinstance(subset, ItemSubset):
        subset = ItemSubset.explicit(subset)
    subset.check(num_items)
    return subset


@dataclass(frozen=True, eq=False)
class DenseEmbeddingMatrix:
    """Explicit |I| x d item embeddings for matrix-multiplication scoring."""

    W: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W)
        if W.ndim != 2 or W.shape[0] < 1 or W.shape[1] < 1:
            raise ValidationError(f"dense matrix must be non-empty 2-D, got shape {W.shape}")
        W = np.ascontiguousarray(W, dtype=REAL_DTYPE)
        if W is self.W and W.flags.writeable:
            W = W.copy()
        bad = _first_nonfinite(W)
        if bad is not None:
            raise ValidationError(f"non-finite value at item {bad[0]}, component {bad[1]}")
        object.__setattr__(self, "W", _frozen(W))

    @property
    def num_items(self) -> int:
        return self.W.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.W.shape[1]


def relative_deviation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """|a - b| / max(|a|, |b|, 1): relative above magnitude 1, absolute below it."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)


def scores_close(a: np.ndarray, b: np.ndarray, rtol: float = 1e-4) -> np.ndarray:
    """Elementwise score agreement used when comparing different summation orders."""
    return relative_deviation(a, b) <= rtol


# -- operations ----------------------------------------------------------------


def compute_sub_id_scores(embeddings: SubItemEmbeddings, phi: SequenceEmbedding) -> SubIdScoreMatrix:
    """Dot product of every sub-id embedding with the matching slice of phi."""
    if len(phi) != embeddings.config.embed_dim:
        raise ValidationError(
            f"dimension mismatch: phi has {len(phi)} components, instance has d={embeddings.config.embed_dim}"
        )
    return SubIdScoreMatrix(_kernels.sub_id_scores(embeddings.table, phi.values))


def _check_scores(S: SubIdScoreMatrix, codebook: Codebook) -> None:
    cfg = codebook.config
    if S.scores.shape != (cfg.num_splits, cfg.num_sub_ids):
        raise ValidationError(
            f"dimension mismatch: score matrix {S.scores.shape}, codebook expects "
            f"{(cfg.num_splits, cfg.num_sub_ids)}"
        )


def _check_item(item: int, num_items: int) -> int:
    if not 0 <= item < num_items:
        raise ValidationError(f"item id {item} out of range [0, {num_items})")
    return int(item)


def score_item(S: SubIdScoreMatrix, codebook: Codebook, item: int) -> float:
    """Score of one item: sum of its sub-id scores, accumulated split by split in float32."""
    _check_scores(S, codebook)
    item = _check_item(item, codebook.config.num_items)
    total = np.float32(0.0)
    for k, code in enumerate(codebook.codes[item]):
        total = np.float32(total + S.scores[k, code])
    return float(total)


def reconstruct_item_embedding(embeddings: SubItemEmbeddings, codebook: Codebook, item: int) -> np.ndarray:
    item = _check_item(item, codebook.config.num_items)
    return np.concatenate([embeddings.table[k, code] for k, code in enumerate(codebook.codes[item])])


def reconstruct_dense(
    embeddings: SubItemEmbeddings,
    codebook: Codebook,
    memory_budget: Optional[int] = None,
) -> DenseEmbeddingMatrix:
    """Materialise every item's reconstructed embedding as a dense matrix."""
    cfg = codebook.config
    budget = default_memory_budget() if memory_budget is None else memory_budget
    if cfg.dense_bytes > budget:
        raise MemoryBudgetError("dense reconstruction", cfg.dense_bytes, budget)
    w = cfg.sub_dim
    W = np.empty((cfg.num_items, cfg.embed_dim), dtype=REAL_DTYPE)
    for k in range(cfg.num_splits):
        W[:, k * w : (k + 1) * w] = embeddings.table[k][codebook.codes[:, k]]
    W.setflags(write=False)
    return DenseEmbeddingMatrix(W)


def top_k_select(scores: np.ndarray, ids: Optional[np.ndarray], K: int) -> TopKResult:
    """Exact top-K of ``scores`` with ties broken by ascending item id.

    ``ids[p]`` is the item id at position ``p``; None means ``ids[p] == p``.
    """
    scores = np.asarray(scores)
    n = scores.shape[0]
    if ids is not None and len(ids) != n:
        raise ValidationError(f"length mismatch: {n} scores, {len(ids)} ids")
    if K < 0:
        raise ValidationError(f"K must be >= 0, got {K}")
    K = min(int(K), n)
    if K == 0:
        return TopKResult.empty()
    if K < n:
        part = np.argpartition(scores, n - K)[n - K :]
        cutoff = scores[part].min()
        above = np.flatnonzero(scores > cutoff)
        tied = np.flatnonzero(scores == cutoff)
        need = K - above.size
        if ids is not None and tied.size > need:
            tied = tied[np.argsort(ids[tied], kind="stable")]
        pos = np.concatenate([above, tied[:need]])
    else:
        pos = np.arange(n)
    item_ids = pos if ids is None else np.asarray(ids)[pos]
    order = np.lexsort((item_ids, -scores[pos].astype(np.float64)))
    return TopKResult(item_ids[order], scores[pos][order])


def pq_item_scores(codebook: Codebook, S: SubIdScoreMatrix, subset: SubsetLike = None) -> np.ndarray:
    """Item-major scores for every item of the subset (the full-materialisation path)."""
    _check_scores(S, codebook)
    subset = _as_subset(subset, codebook.config.num_items)
    n = subset.size(codebook.config.num_items)
    out = np.empty(n, dtype=REAL_DTYPE)
    ids = _EMPTY_IDS if subset.is_all else subset.ids
    return _kernels.pq_scores(codebook.codes, S.scores, ids, not subset.is_all, out)


def pq_topk(
    codebook: Codebook,
    S: SubIdScoreMatrix,
    K: int,
    subset: SubsetLike = None,
    *,
    threads: Optional[int] = None,
    chunk_size: int = DEFAULT_CHUNK,
    materialize: bool = False,
) -> TopKResult:
    """PQTopK: score each item as the sum of its m sub-id scores, keep the best K.

    The item range is cut into chunk-aligned contiguous blocks, one per
    worker; each worker keeps a bounded heap of its own best K, and the
    candidates are merged once at the end. The result does not depend on
    the thread count. ``materialize=True`` scores every item into one array
    and selects from it instead (used for verification).
    """
    _check_scores(S, codebook)
    if K < 0:
        raise ValidationError(f"K must be >= 0, got {K}")
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    num_items = codebook.config.num_items
    subset = _as_subset(subset, num_items)
    n = subset.size(num_items)
    K = min(int(K), n)
    if K == 0:
        return TopKResult.empty()
    if materialize or 4 * K >= n:
        return top_k_select(pq_item_scores(codebook, S, subset), subset.ids, K)

    ids = _EMPTY_IDS if subset.is_all else subset.ids
    use_ids = not subset.is_all
    workers = max(1, min(threads or get_threads(), -(-n // chunk_size)))
    if workers == 1:
        hs, hi = _kernels.pq_range_topk(codebook.codes, S.scores, ids, use_ids, 0, n, K, chunk_size)
        return top_k_select(hs, hi, K)

    n_chunks = -(-n // chunk_size)
    bounds = [min(n, (n_chunks * w // workers) * chunk_size) for w in range(workers + 1)]
    futures = [
        _pool(workers).submit(
            _kernels.pq_range_topk, codebook.codes, S.scores, ids, use_ids, lo, hi, K, chunk_size
        )
        for lo, hi in zip(bounds[:-1], bounds[1:])
        if hi > lo
    ]
    parts = [f.result() for f in futures]
    cand_scores = np.concatenate([p[0] for p in parts])
    cand_ids = np.concatenate([p[1] for p in parts])
    return top_k_select(cand_scores, cand_ids, K)


def recjpq_score(codebook: Codebook, S: SubIdScoreMatrix, K: int, subset: SubsetLike = None) -> TopKResult:
    """RecJPQ's split-major scoring: one full accumulator, splits added one after another.

    Deliberately left as the baseline does it; the per-split pass over items
    is vectorised but splits are never processed concurrently.
    """
    _check_scores(S, codebook)
    if K < 0:
        raise ValidationError(f"K must be >= 0, got {K}")
    num_items = codebook.config.num_items
    subset = _as_subset(subset, num_items)
    n = subset.size(num_items)
    if min(K, n) == 0:
        return TopKResult.empty()
    codes = codebook.codes if subset.is_all else codebook.codes[subset.ids]
    acc = np.zeros(n, dtype=REAL_DTYPE)
    for k in range(codebook.config.num_splits):
        acc += S.scores[k][codes[:, k]]
    return top_k_select(acc, subset.ids, K)


def matmul_topk(
    W: DenseEmbeddingMatrix,
    phi: SequenceEmbedding,
    K: int,
    subset: SubsetLike = None,
    memory_budget: Optional[int] = None,
) -> TopKResult:
    """Dense scoring r = W phi followed by exact top-K."""
    if len(phi) != W.embed_dim:
        raise ValidationError(f"shape mismatch: W is {W.W.shape}, phi has {len(phi)} components")
    if K < 0:
        raise ValidationError(f"K must be >= 0, got {K}")
    subset = _as_subset(subset, W.num_items)
    n = subset.size(W.num_items)
    budget = default_memory_budget() if memory_budget is None else memory_budget
    needed = n * 4 + (0 if subset.is_all else n * W.embed_dim * 4)
    if needed > budget:
        raise MemoryBudgetError("dense scoring buffers", needed, budget)
    if min(K, n) == 0:
        return TopKResult.empty()
    rows = W.W if subset.is_all else W.W[subset.ids]
    return top_k_select(rows @ phi.values, subset.ids, K)
