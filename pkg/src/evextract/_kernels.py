"""Hot numeric kernels: token feature hashing and flat-index row scoring.

Each kernel has a numba ``@njit`` implementation and a pure-numpy one. Hash
kernels agree exactly; row reductions agree to float64 rounding. The numba
path is used when numba imports and the environment variable
``EVEXTRACT_NO_NUMBA`` is unset or ``0``. Both paths stay importable so tests
and ``benchmarks/bench_kernels.py`` can compare them.

Within one path, row reductions run independently per row in float64, so
identical stored vectors always receive bit-identical scores (the id tie-break
depends on this).
"""

from __future__ import annotations

import os

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_ROW_BLOCK = 2048


def _numba_requested() -> bool:
    return os.environ.get("EVEXTRACT_NO_NUMBA", "0").strip().lower() in ("", "0", "false", "no")


# --------------------------------------------------------------------------
# numpy implementations


def hash_accumulate_numpy(buf: np.ndarray, offsets: np.ndarray, dim: int) -> np.ndarray:
    """Signed bucket counts of FNV-1a-64 token hashes.

    ``buf`` holds the UTF-8 bytes of all tokens back to back; token ``t``
    occupies ``buf[offsets[t]:offsets[t + 1]]``.
    """
    out = np.zeros(dim, dtype=np.float64)
    n_tok = len(offsets) - 1
    if n_tok <= 0:
        return out
    starts = offsets[:-1]
    lengths = offsets[1:] - starts
    h = np.full(n_tok, FNV_OFFSET, dtype=np.uint64)
    prime = np.uint64(FNV_PRIME)
    for pos in range(int(lengths.max())):
        live = lengths > pos
        idx = starts[live] + pos
        h[live] = (h[live] ^ buf[idx].astype(np.uint64)) * prime
    buckets = (h % np.uint64(dim)).astype(np.int64)
    signs = np.where((h >> np.uint64(63)) & np.uint64(1), -1.0, 1.0)
    np.add.at(out, buckets, signs)
    return out


def dot_rows_numpy(matrix: np.ndarray, q: np.ndarray) -> np.ndarray:
    n = matrix.shape[0]
    out = np.empty(n, dtype=np.float64)
    for lo in range(0, n, _ROW_BLOCK):
        block = matrix[lo : lo + _ROW_BLOCK].astype(np.float64)
        out[lo : lo + _ROW_BLOCK] = (block * q).sum(axis=1)
    return out


def sqdist_rows_numpy(matrix: np.ndarray, q: np.ndarray) -> np.ndarray:
    n = matrix.shape[0]
    out = np.empty(n, dtype=np.float64)
    for lo in range(0, n, _ROW_BLOCK):
        diff = matrix[lo : lo + _ROW_BLOCK].astype(np.float64) - q
        out[lo : lo + _ROW_BLOCK] = (diff * diff).sum(axis=1)
    return out


def row_norms_numpy(matrix: np.ndarray) -> np.ndarray:
    n = matrix.shape[0]
    out = np.empty(n, dtype=np.float64)
    for lo in range(0, n, _ROW_BLOCK):
        block = matrix[lo : lo + _ROW_BLOCK].astype(np.float64)
        out[lo : lo + _ROW_BLOCK] = (block * block).sum(axis=1)
    return np.sqrt(out)


# --------------------------------------------------------------------------
# numba implementations

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


if HAVE_NUMBA:

    @njit(cache=True)
    def hash_accumulate_numba(buf, offsets, dim):
        out = np.zeros(dim, dtype=np.float64)
        prime = np.uint64(FNV_PRIME)
        udim = np.uint64(dim)
        for t in range(offsets.shape[0] - 1):
            h = np.uint64(FNV_OFFSET)
            for p in range(offsets[t], offsets[t + 1]):
                h = (h ^ np.uint64(buf[p])) * prime
            bucket = np.int64(h % udim)
            if (h >> np.uint64(63)) & np.uint64(1):
                out[bucket] -= 1.0
            else:
                out[bucket] += 1.0
        return out

    @njit(cache=True)
    def dot_rows_numba(matrix, q):
        n, d = matrix.shape
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            s = 0.0
            for j in range(d):
                s += np.float64(matrix[i, j]) * q[j]
            out[i] = s
        return out

    @njit(cache=True)
    def sqdist_rows_numba(matrix, q):
        n, d = matrix.shape
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            s = 0.0
            for j in range(d):
                diff = np.float64(matrix[i, j]) - q[j]
                s += diff * diff
            out[i] = s
        return out

    @njit(cache=True)
    def row_norms_numba(matrix):
        n, d = matrix.shape
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            s = 0.0
            for j in range(d):
                v = np.float64(matrix[i, j])
                s += v * v
            out[i] = np.sqrt(s)
        return out

else:  # pragma: no cover
    hash_accumulate_numba = hash_accumulate_numpy
    dot_rows_numba = dot_rows_numpy
    sqdist_rows_numba = sqdist_rows_numpy
    row_norms_numba = row_norms_numpy


USING_NUMBA = HAVE_NUMBA and _numba_requested()

if USING_NUMBA:
    hash_accumulate = hash_accumulate_numba
    dot_rows = dot_rows_numba
    sqdist_rows = sqdist_rows_numba
    row_norms = row_norms_numba
else:
    hash_accumulate = hash_accumulate_numpy
    dot_rows = dot_rows_numpy
    sqdist_rows = sqdist_rows_numpy
    row_norms = row_norms_numpy


def backend_name() -> str:
    return "numba" if USING_NUMBA else "numpy"
