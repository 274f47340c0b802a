"""Domain types, validation and the seeded synthetic-instance generator.

Every array held by these types is float32 (embeddings, scores) or uint16
(sub-id codes) and is frozen read-only after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import psutil

CODE_DTYPE = np.uint16
REAL_DTYPE = np.float32
MAX_SUB_IDS = int(np.iinfo(CODE_DTYPE).max) + 1  # 65,536


class PQError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PQError, ValueError):
    """Input violates a type invariant (shape, range, finiteness)."""


class MemoryBudgetError(PQError, MemoryError):
    """A requested allocation would exceed the configured memory budget."""

    def __init__(self, what: str, required: int, budget: int):
        self.required = int(required)
        self.budget = int(budget)
        super().__init__(
            f"{what} needs {self.required:,} bytes, above the memory budget "
            f"of {self.budget:,} bytes"
        )


_memory_budget: Optional[int] = None


def default_memory_budget() -> int:
    """75% of physical memory, unless overridden with set_memory_budget."""
    if _memory_budget is not None:
        return _memory_budget
    return int(psutil.virtual_memory().total * 0.75)


def set_memory_budget(nbytes: Optional[int]) -> None:
    global _memory_budget
    if nbytes is not None and nbytes <= 0:
        raise ValueError("memory budget must be positive")
    _memory_budget = None if nbytes is None else int(nbytes)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _first_nonfinite(arr: np.ndarray) -> Optional[Tuple[int, ...]]:
    flat = arr.reshape(-1)
    step = 1 << 22
    for start in range(0, flat.size, step):
        bad = np.flatnonzero(~np.isfinite(flat[start : start + step]))
        if bad.size:
            return tuple(int(i) for i in np.unravel_index(start + bad[0], arr.shape))
    return None


@dataclass(frozen=True)
class PQConfig:
    """Sizes of a product-quantised catalogue.

    num_items is |I|, num_splits is m, num_sub_ids is b (per split) and
    embed_dim is d. Each split covers d/m consecutive embedding dimensions.
    """

    num_items: int
    num_splits: int
    num_sub_ids: int
    embed_dim: int

    def __post_init__(self):
        for name in ("num_items", "num_splits", "num_sub_ids", "embed_dim"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise ValidationError(f"{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
            if value < 1:
                raise ValidationError(f"{name} must be >= 1, got {value}")
        if self.embed_dim < self.num_splits:
            raise ValidationError(
                f"embed_dim ({self.embed_dim}) must be >= num_splits ({self.num_splits})"
            )
        if self.embed_dim % self.num_splits:
            raise ValidationError(
                f"d not divisible by m: embed_dim={self.embed_dim}, num_splits={self.num_splits}"
            )
        if self.num_sub_ids > MAX_SUB_IDS:
            raise ValidationError(
                f"num_sub_ids={self.num_sub_ids} exceeds {MAX_SUB_IDS} (16-bit codes)"
            )

    @property
    def sub_dim(self) -> int:
        return self.embed_dim // self.num_splits

    @property
    def code_bytes(self) -> int:
        return self.num_items * self.num_splits * np.dtype(CODE_DTYPE).itemsize

    @property
    def sub_embedding_bytes(self) -> int:
        return self.num_splits * self.num_sub_ids * self.sub_dim * np.dtype(REAL_DTYPE).itemsize

    @property
    def dense_bytes(self) -> int:
        return self.num_items * self.embed_dim * np.dtype(REAL_DTYPE).itemsize


@dataclass(frozen=True, eq=False)
class Codebook:
    """|I| x m table of sub-id assignments; row i holds g_i1..g_im."""

    config: PQConfig
    codes: np.ndarray

    def __post_init__(self):
        cfg = self.config
        codes = np.asarray(self.codes)
        expected = (cfg.num_items, cfg.num_splits)
        if codes.shape != expected:
            raise ValidationError(f"dimension mismatch: codes shape {codes.shape}, expected {expected}")
        if codes.dtype.kind not in "iu":
            raise ValidationError(f"codes must be integers, got dtype {codes.dtype}")
        if codes.size:
            lo, hi = codes.min(), codes.max()
            if lo < 0 or hi >= cfg.num_sub_ids:
                bad = np.argwhere((codes < 0) | (codes >= cfg.num_sub_ids))[0]
                raise ValidationError(
                    f"code out of range [0, {cfg.num_sub_ids}): value {codes[tuple(bad)]} "
                    f"at item {bad[0]}, split {bad[1]}"
                )
        codes = np.ascontiguousarray(codes, dtype=CODE_DTYPE)
        if codes is self.codes:
            codes = codes.copy()
        object.__setattr__(self, "codes", _frozen(codes))

    def __eq__(self, other):
        if not isinstance(other, Codebook):
            return NotImplemented
        return self.config == other.config and np.array_equal(self.codes, other.codes)

    @property
    def nbytes(self) -> int:
        return self.codes.nbytes


@dataclass(frozen=True, eq=False)
class SubItemEmbeddings:
    """Shared sub-id embeddings: table[k, j] is the (d/m)-vector for sub-id j of split k."""

    config: PQConfig
    table: np.ndarray

    def __post_init__(self):
        cfg = self.config
        table = np.asarray(self.table)
        expected = (cfg.num_splits, cfg.num_sub_ids, cfg.sub_dim)
        if table.shape != expected:
            raise ValidationError(f"dimension mismatch: table shape {table.shape}, expected {expected}")
        table = np.array(table, dtype=REAL_DTYPE, order="C", copy=True)
        bad = _first_nonfinite(table)
        if bad is not None:
            raise ValidationError(
                f"non-finite embedding value {table[bad]} at split {bad[0]}, "
                f"sub-id {bad[1]}, component {bad[2]}"
            )
        object.__setattr__(self, "table", _frozen(table))

    def __eq__(self, other):
        if not isinstance(other, SubItemEmbeddings):
            return NotImplemented
        return self.config == other.config and self.table.tobytes() == other.table.tobytes()


@dataclass(frozen=True, eq=False)
class SequenceEmbedding:
    """A d-dimensional query vector (the sequence representation)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=REAL_DTYPE, copy=True)
        if values.ndim != 1 or values.size == 0:
            raise ValidationError(f"sequence embedding must be a non-empty vector, got shape {values.shape}")
        bad = _first_nonfinite(values)
        if bad is not None:
            raise ValidationError(f"non-finite value at component {bad[0]}")
        object.__setattr__(self, "values", _frozen(values))

    def __len__(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SequenceEmbedding):
            return NotImplemented
        return self.values.tobytes() == other.values.tobytes()

    def split(self, m: int) -> List[np.ndarray]:
        return split_embedding(self, m)


@dataclass(frozen=True, eq=False)
class SubIdScoreMatrix:
    """m x b table of sub-id scores for one query."""

    scores: np.ndarray

    def __post_init__(self):
        scores = np.array(self.scores, dtype=REAL_DTYPE, order="C", copy=True)
        if scores.ndim != 2:
            raise ValidationError(f"sub-id scores must be 2-D (m x b), got shape {scores.shape}")
        object.__setattr__(self, "scores", _frozen(scores))

    @property
    def num_splits(self) -> int:
        return self.scores.shape[0]

    @property
    def num_sub_ids(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True, eq=False)
class TopKResult:
    """Ranked (item_id, score) pairs, best first; ties go to the smaller id.

    Equality is bitwise on the score values.
    """

    ids: np.ndarray
    scores: np.ndarray = field(repr=False)

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        scores = np.asarray(self.scores, dtype=REAL_DTYPE)
        if ids.shape != scores.shape or ids.ndim != 1:
            raise ValidationError("ids and scores must be 1-D arrays of equal length")
        object.__setattr__(self, "ids", _frozen(ids))
        object.__setattr__(self, "scores", _frozen(scores))

    @classmethod
    def empty(cls) -> "TopKResult":
        return cls(np.empty(0, np.int64), np.empty(0, REAL_DTYPE))

    def __len__(self) -> int:
        return self.ids.shape[0]

    def __iter__(self) -> Iterator[Tuple[int, float]]:
        return iter(self.entries)

    def __eq__(self, other):
        if not isinstance(other, TopKResult):
            return NotImplemented
        return (
            np.array_equal(self.ids, other.ids)
            and self.scores.tobytes() == other.scores.tobytes()
        )

    @property
    def entries(self) -> List[Tuple[int, float]]:
        return [(int(i), float(s)) for i, s in zip(self.ids, self.scores)]

    def __repr__(self) -> str:
        head = ", ".join(f"({i}, {s:.6g})" for i, s in self.entries[:5])
        more = ", ..." if len(self) > 5 else ""
        return f"TopKResult([{head}{more}])"


def validate_instance(codebook: Codebook, embeddings: SubItemEmbeddings) -> None:
    """Check that a codebook and its sub-item embeddings form one instance.

    Raises ValidationError naming the first problem found; returns None when
    the pair is consistent.
    """
    if codebook.config != embeddings.config:
        raise ValidationError(
            f"dimension mismatch: codebook config {codebook.config} "
            f"differs from embeddings config {embeddings.config}"
        )
    # Re-run the per-type checks: arrays may have been swapped in via object.__setattr__.
    Codebook(codebook.config, codebook.codes)
    SubItemEmbeddings(embeddings.config, embeddings.table)


def split_embedding(phi: SequenceEmbedding | np.ndarray | Sequence[float], m: int) -> List[np.ndarray]:
    """Split a d-vector into m consecutive sub-vectors of width d/m (views, not copies)."""
    values = phi.values if isinstance(phi, SequenceEmbedding) else np.asarray(phi, dtype=REAL_DTYPE)
    d = values.shape[0]
    if m < 1 or d % m:
        raise ValidationError(f"d not divisible by m: d={d}, m={m}")
    width = d // m
    return [values[k * width : (k + 1) * width] for k in range(m)]


def generate_synthetic(
    config: PQConfig,
    seed: int,
    memory_budget: Optional[int] = None,
) -> Tuple[Codebook, SubItemEmbeddings, SequenceEmbedding]:
    """Random instance: uniform codes, standard-normal sub-embeddings and query.

    The output is a pure function of (config, seed).
    """
    budget = default_memory_budget() if memory_budget is None else memory_budget
    required = config.code_bytes + config.sub_embedding_bytes
    if required > budget:
        raise MemoryBudgetError(
            f"synthetic instance with {config.num_items:,} items x {config.num_splits} splits",
            required,
            budget,
        )
    rng = np.random.default_rng(seed)
    # b <= 65,536 so the exclusive upper bound fits in uint32; draw then narrow.
    codes = rng.integers(0, config.num_sub_ids, size=(config.num_items, config.num_splits), dtype=np.uint32)
    codes = codes.astype(CODE_DTYPE)
    table = rng.standard_normal(
        (config.num_splits, config.num_sub_ids, config.sub_dim), dtype=REAL_DTYPE
    )
    phi = rng.standard_normal(config.embed_dim, dtype=REAL_DTYPE)
    return Codebook(config, codes), SubItemEmbeddings(config, table), SequenceEmbedding(phi)


def random_query(config: PQConfig, rng: np.random.Generator) -> SequenceEmbedding:
    return SequenceEmbedding(rng.standard_normal(config.embed_dim, dtype=REAL_DTYPE))
