"""Exact flat vector index with top-k retrieval and a checksummed file format.

File layout (little-endian)::

    b"EEIX" | version u32 | metric u8 | dim u32 | count u64
    count x (id_len u32 | id utf-8 | dim x float32)
    crc32 u32   (of every preceding byte)
"""

from __future__ import annotations

import io
import struct
import zlib
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np

from . import _kernels
from .embed import EmbeddingVector
from .errors import ChecksumError, IndexBuildError, IndexFormatError

MAGIC = b"EEIX"
FORMAT_VERSION = 1
METRICS = ("l2", "cosine")
_METRIC_CODES = {"l2": 0, "cosine": 1}
_HEADER = struct.Struct("<4sIBIQ")


@dataclass(frozen=True)
class RetrievalResult:
    instance_id: str
    score: float
    rank: int


@dataclass(eq=False)
class FlatIndex:
    dim: int
    metric: str
    ids: list[str]
    matrix: np.ndarray  # (count, dim) float32
    _tie_rank: np.ndarray = field(init=False, repr=False)
    _norms: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise IndexBuildError(f"metric must be one of {METRICS}, got {self.metric!r}")
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float32).reshape(len(self.ids), self.dim)
        # position of each id in ascending id order, used as the tie-break key
        order = sorted(range(len(self.ids)), key=self.ids.__getitem__)
        self._tie_rank = np.empty(len(self.ids), dtype=np.int64)
        self._tie_rank[order] = np.arange(len(self.ids))
        if self.metric == "cosine":
            self._norms = _kernels.row_norms(self.matrix) if len(self.ids) else np.zeros(0)

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FlatIndex):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.metric == other.metric
            and self.ids == other.ids
            and self.matrix.tobytes() == other.matrix.tobytes()
        )

    def vector(self, instance_id: str) -> EmbeddingVector:
        return EmbeddingVector(self.matrix[self.ids.index(instance_id)])


def build_index(vectors: Iterable[tuple[str, EmbeddingVector]], metric: str = "l2", dim: int | None = None) -> FlatIndex:
    """Build an index holding exactly ``vectors`` in input order.

    ``dim`` is only needed for an empty index; otherwise it is taken from the
    first vector and every other vector must match.
    """
    ids: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    for iid, vec in vectors:
        if iid in seen:
            raise IndexBuildError(f"duplicate instance id {iid!r}")
        seen.add(iid)
        if dim is None:
            dim = vec.dim
        elif vec.dim != dim:
            raise IndexBuildError(f"dimension mismatch for {iid!r}: {vec.dim} != {dim}")
        ids.append(iid)
        rows.append(vec.values)
    if dim is None:
        raise IndexBuildError("cannot infer dim of an empty index; pass dim=")
    matrix = np.vstack(rows) if rows else np.zeros((0, dim), dtype=np.float32)
    return FlatIndex(dim=dim, metric=metric, ids=ids, matrix=matrix)


def score_all(index: FlatIndex, q: np.ndarray) -> np.ndarray:
    """Similarity of ``q`` to every entry (higher is better)."""
    q = np.asarray(q, dtype=np.float64)
    if index.metric == "l2":
        return -np.sqrt(_kernels.sqdist_rows(index.matrix, q))
    dots = _kernels.dot_rows(index.matrix, q)
    denom = index._norms * float(np.sqrt(np.dot(q, q)))
    out = np.zeros_like(dots)
    np.divide(dots, denom, out=out, where=denom > 0)
    return out


def query(
    index: FlatIndex,
    q: EmbeddingVector | np.ndarray,
    k: int,
    exclude: Iterable[str] = (),
) -> list[RetrievalResult]:
    """Top-``k`` entries by similarity, ties broken by ascending instance id.

    cosine score = dot(q, v) / (|q| |v|) (0 when either norm is 0);
    l2 score = -|q - v|. Ids in ``exclude`` never appear in the result.
    """
    values = q.values if isinstance(q, EmbeddingVector) else np.asarray(q, dtype=np.float32)
    if values.shape != (index.dim,):
        raise IndexBuildError(f"query dim {values.shape[-1] if values.ndim else 0} != index dim {index.dim}")
    if k < 1:
        raise ValueError("k must be >= 1")
    if not len(index):
        return []
    scores = score_all(index, values)
    order = np.lexsort((index._tie_rank, -scores))
    excluded = set(exclude)
    results = []
    for pos in order:
        iid = index.ids[pos]
        if iid in excluded:
            continue
        results.append(RetrievalResult(iid, float(scores[pos]), len(results) + 1))
        if len(results) == k:
            break
    return results


def _encode(index: FlatIndex) -> bytes:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, FORMAT_VERSION, _METRIC_CODES[index.metric], index.dim, len(index.ids)))
    for iid, row in zip(index.ids, index.matrix):
        raw = iid.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(row.astype("<f4").tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def save_index(index: FlatIndex, sink: str | Path | BinaryIO) -> None:
    data = _encode(index)
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(data)
    else:
        sink.write(data)


def read_header(data: bytes) -> tuple[int, str, int, int]:
    """(version, metric, dim, count) without verifying the checksum."""
    if len(data) < _HEADER.size or data[:4] != MAGIC:
        raise IndexFormatError("not an index file (bad magic)")
    magic, version, metric_code, dim, count = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise IndexFormatError(f"unsupported index format version {version} (expected {FORMAT_VERSION})")
    metric = {v: k for k, v in _METRIC_CODES.items()}.get(metric_code)
    if metric is None:
        raise IndexFormatError(f"unknown metric code {metric_code}")
    return version, metric, dim, count


def load_index(source: str | Path | BinaryIO | bytes) -> FlatIndex:
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    elif isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    else:
        data = source.read()
    if len(data) < _HEADER.size + 4 or data[:4] != MAGIC:
        if data[:4] == MAGIC:
            raise ChecksumError("index file truncated")
        raise IndexFormatError("not an index file (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("index checksum mismatch (file truncated or corrupted)")
    _, metric, dim, count = read_header(body)

    ids: list[str] = []
    matrix = np.empty((count, dim), dtype=np.float32)
    pos = _HEADER.size
    row_bytes = 4 * dim
    try:
        for i in range(count):
            (n,) = struct.unpack_from("<I", body, pos)
            pos += 4
            ids.append(body[pos : pos + n].decode("utf-8"))
            pos += n
            if pos + row_bytes > len(body):
                raise IndexFormatError("record extends past end of file")
            matrix[i] = np.frombuffer(body, dtype="<f4", count=dim, offset=pos)
            pos += row_bytes
    except struct.error as exc:
        raise IndexFormatError(f"corrupt record table: {exc}") from exc
    if pos != len(body):
        raise IndexFormatError(f"{len(body) - pos} trailing bytes after records")
    if len(set(ids)) != len(ids):
        raise IndexFormatError("duplicate ids in index file")
    return FlatIndex(dim=dim, metric=metric, ids=ids, matrix=matrix)

