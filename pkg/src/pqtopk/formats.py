"""Little-endian binary files for PQ instances and dense embedding matrices.

Instance file (``.pqtk``)::

    offset  size          field
    0       4             magic b"PQTK"
    4       4   u32       format version (1)
    8       32  4 x u64   num_items, num_splits, num_sub_ids, embed_dim
    40      2*|I|*m       codes, u16, row-major (item, split)
    ...     4*m*b*(d/m)   sub-item embeddings, f32, (split, sub-id, component)

Dense matrix file (``.dens``)::

    0       4             magic b"DENS"
    4       4   u32       format version (1)
    8       16  2 x u64   num_items, embed_dim
    24      4*|I|*d       f32 row-major

Files must end exactly after the payload; trailing bytes are rejected.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from .core import Codebook, PQConfig, PQError, SubItemEmbeddings, ValidationError, validate_instance

PathLike = Union[str, os.PathLike]

INSTANCE_MAGIC = b"PQTK"
DENSE_MAGIC = b"DENS"
FORMAT_VERSION = 1

_INSTANCE_HEADER = struct.Struct("<4sI4Q")
_DENSE_HEADER = struct.Struct("<4sI2Q")
_U16 = np.dtype("<u2")
_F32 = np.dtype("<f4")


class FormatError(ValidationError):
    """File is not a well-formed instance or dense-matrix file."""


def _read_exact(f, n: int, what: str, path) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"{path}: truncated {what} (expected {n} bytes, got {len(data)})")
    return data


def _read_array(f, dtype: np.dtype, count: int, what: str, path) -> np.ndarray:
    arr = np.fromfile(f, dtype=dtype, count=count)
    if arr.size != count:
        raise FormatError(f"{path}: truncated {what} (expected {count} values, got {arr.size})")
    return arr


def _check_header(magic: bytes, version: int, expected: bytes, path) -> None:
    if magic != expected:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {expected!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")


def _check_eof(f, path) -> None:
    if f.read(1):
        raise FormatError(f"{path}: trailing bytes after payload")


def write_instance(path: PathLike, codebook: Codebook, embeddings: SubItemEmbeddings) -> int:
    """Write an instance file and return the number of bytes written."""
    validate_instance(codebook, embeddings)
    cfg = codebook.config
    header = _INSTANCE_HEADER.pack(
        INSTANCE_MAGIC, FORMAT_VERSION, cfg.num_items, cfg.num_splits, cfg.num_sub_ids, cfg.embed_dim
    )
    with open(path, "wb") as f:
        f.write(header)
        codebook.codes.astype(_U16, copy=False).tofile(f)
        embeddings.table.astype(_F32, copy=False).tofile(f)
    return _INSTANCE_HEADER.size + codebook.codes.nbytes + embeddings.table.nbytes


def read_instance(path: PathLike) -> Tuple[Codebook, SubItemEmbeddings]:
    path = Path(path)
    with open(path, "rb") as f:
        magic, version, n, m, b, d = _INSTANCE_HEADER.unpack(
            _read_exact(f, _INSTANCE_HEADER.size, "header", path)
        )
        _check_header(magic, version, INSTANCE_MAGIC, path)
        try:
            cfg = PQConfig(n, m, b, d)
        except ValidationError as exc:
            raise FormatError(f"{path}: invalid config in header: {exc}") from exc
        expected = _INSTANCE_HEADER.size + cfg.code_bytes + cfg.sub_embedding_bytes
        size = os.fstat(f.fileno()).st_size
        if size < expected:
            raise FormatError(f"{path}: truncated file ({size} bytes, header implies {expected})")
        codes = _read_array(f, _U16, n * m, "codes", path).reshape(n, m)
        table = _read_array(f, _F32, cfg.num_splits * cfg.num_sub_ids * cfg.sub_dim, "sub-item embeddings", path)
        _check_eof(f, path)
    try:
        return Codebook(cfg, codes), SubItemEmbeddings(cfg, table.reshape(m, b, cfg.sub_dim))
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_dense(path: PathLike, W: np.ndarray) -> int:
    W = np.asarray(W)
    if W.ndim != 2:
        raise ValidationError(f"dense matrix must be 2-D, got shape {W.shape}")
    with open(path, "wb") as f:
        f.write(_DENSE_HEADER.pack(DENSE_MAGIC, FORMAT_VERSION, W.shape[0], W.shape[1]))
        np.ascontiguousarray(W, dtype=_F32).tofile(f)
    return _DENSE_HEADER.size + W.shape[0] * W.shape[1] * 4


def read_dense(path: PathLike) -> np.ndarray:
    """Load a dense matrix file as a float32 (|I|, d) array."""
    path = Path(path)
    with open(path, "rb") as f:
        magic, version, n, d = _DENSE_HEADER.unpack(_read_exact(f, _DENSE_HEADER.size, "header", path))
        _check_header(magic, version, DENSE_MAGIC, path)
        if n < 1 or d < 1:
            raise FormatError(f"{path}: empty matrix ({n} x {d})")
        W = _read_array(f, _F32, n * d, "matrix payload", path).reshape(n, d)
        _check_eof(f, path)
    return W.astype(np.float32, copy=False)


__all__ = [
    "FormatError",
    "PQError",
    "read_dense",
    "read_instance",
    "write_dense",
    "write_instance",
]
