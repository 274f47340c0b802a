"""Compiled inner loops. All kernels release the GIL so they can run on worker threads.

Float32 accumulation is kept in ascending split order and fastmath stays off:
PQTopK and the RecJPQ accumulator must produce bit-identical item scores.
"""

import numpy as np
from numba import njit


@njit(nogil=True, cache=True)
def sub_id_scores(table, phi):
    m, b, w = table.shape
    out = np.zeros((m, b), dtype=np.float32)
    for k in range(m):
        base = k * w
        for j in range(b):
            acc = np.float32(0.0)
            for c in range(w):
                acc += table[k, j, c] * phi[base + c]
            out[k, j] = acc
    return out


@njit(nogil=True, cache=True, inline="always")
def _worse(s_a, i_a, s_b, i_b):
    # a ranks below b: lower score, or equal score and larger id
    return s_a < s_b or (s_a == s_b and i_a > i_b)


@njit(nogil=True, cache=True, inline="always")
def _sift_down(hs, hi, n, pos):
    s = hs[pos]
    i = hi[pos]
    while True:
        child = 2 * pos + 1
        if child >= n:
            break
        right = child + 1
        if right < n and _worse(hs[right], hi[right], hs[child], hi[child]):
            child = right
        if _worse(hs[child], hi[child], s, i):
            hs[pos] = hs[child]
            hi[pos] = hi[child]
            pos = child
        else:
            break
    hs[pos] = s
    hi[pos] = i


@njit(nogil=True, cache=True, inline="always")
def _sift_up(hs, hi, pos):
    s = hs[pos]
    i = hi[pos]
    while pos > 0:
        parent = (pos - 1) >> 1
        if _worse(s, i, hs[parent], hi[parent]):
            hs[pos] = hs[parent]
            hi[pos] = hi[parent]
            pos = parent
        else:
            break
    hs[pos] = s
    hi[pos] = i


@njit(nogil=True, cache=True)
def pq_range_topk(codes, S, ids, use_ids, start, stop, k, chunk):
    """Item-major scoring of positions [start, stop) with a bounded min-heap of size k.

    Positions map to item ids through ``ids`` when ``use_ids`` is set.
    Work proceeds chunk by chunk: a chunk's scores are computed into a small
    buffer, then offered to the heap.
    """
    m = codes.shape[1]
    hs = np.empty(k, dtype=np.float32)
    hi = np.empty(k, dtype=np.int64)
    buf = np.empty(chunk, dtype=np.float32)
    n = 0
    for c0 in range(start, stop, chunk):
        c1 = min(c0 + chunk, stop)
        for p in range(c0, c1):
            item = ids[p] if use_ids else p
            s = np.float32(0.0)
            for j in range(m):
                s += S[j, codes[item, j]]
            buf[p - c0] = s
        for p in range(c0, c1):
            s = buf[p - c0]
            item = ids[p] if use_ids else p
            if n < k:
                hs[n] = s
                hi[n] = item
                _sift_up(hs, hi, n)
                n += 1
            elif _worse(hs[0], hi[0], s, item):
                hs[0] = s
                hi[0] = item
                _sift_down(hs, hi, n, 0)
    return hs[:n], hi[:n]


@njit(nogil=True, cache=True)
def pq_scores(codes, S, ids, use_ids, out):
    """Item-major scores for every position, written into ``out``."""
    m = codes.shape[1]
    for p in range(out.shape[0]):
        item = ids[p] if use_ids else p
        s = np.float32(0.0)
        for j in range(m):
            s += S[j, codes[item, j]]
        out[p] = s
    return out
