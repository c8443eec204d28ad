from __future__ import annotations

import io
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from evextract.embed import EmbeddingVector
from evextract.errors import ChecksumError, IndexBuildError, IndexFormatError
from evextract.index import build_index, load_index, query, read_header, save_index


def brute_force(ids, matrix, q, metric, k, exclude=()):
    """Independent full-sort ranking: score every entry in float64, sort by
    (-score, id)."""
    m = matrix.astype(np.float64)
    qq = q.astype(np.float64)
    if metric == "l2":
        scores = [-float(np.sqrt(np.sum((row - qq) ** 2))) for row in m]
    else:
        qn = float(np.sqrt(np.sum(qq * qq)))
        scores = []
        for row in m:
            denom = float(np.sqrt(np.sum(row * row))) * qn
            scores.append(float(np.sum(row * qq)) / denom if denom > 0 else 0.0)
    order = sorted((i for i in range(len(ids)) if ids[i] not in exclude), key=lambda i: (-scores[i], ids[i]))
    return [ids[i] for i in order[:k]]


def _index(matrix, metric="l2", ids=None):
    ids = ids or [f"id{i:04d}" for i in range(len(matrix))]
    return build_index(zip(ids, (EmbeddingVector(r) for r in matrix)), metric=metric), ids


def test_cosine_worked_example():
    m = np.array([[1, 0], [0, 1], [0.9, 0.1]], dtype=np.float32)
    idx, _ = _index(m, "cosine", ["a", "b", "c"])
    hits = query(idx, EmbeddingVector(np.array([1, 0], dtype=np.float32)), 2)
    assert [h.instance_id for h in hits] == ["a", "c"]
    assert hits[0].score == pytest.approx(1.0)
    assert hits[1].score == pytest.approx(0.9 / np.sqrt(0.82), rel=1e-6)
    assert [h.rank for h in hits] == [1, 2]


def test_ties_break_by_ascending_id_not_insertion_order():
    m = np.ones((3, 4), dtype=np.float32)
    idx, _ = _index(m, "l2", ["zeta", "alpha", "mid"])
    assert [h.instance_id for h in query(idx, np.zeros(4, dtype=np.float32), 3)] == ["alpha", "mid", "zeta"]


def test_exclusion_removes_self_and_backfills():
    m = np.eye(4, dtype=np.float32)
    idx, ids = _index(m, "cosine")
    hits = query(idx, m[0], 2, exclude={ids[0]})
    assert ids[0] not in [h.instance_id for h in hits] and len(hits) == 2


def test_k_larger_than_index_returns_everything():
    idx, _ = _index(np.eye(3, dtype=np.float32))
    assert len(query(idx, np.ones(3, dtype=np.float32), 10)) == 3


def test_zero_norm_cosine_scores_zero():
    m = np.array([[0, 0], [1, 0]], dtype=np.float32)
    idx, _ = _index(m, "cosine", ["a", "b"])
    hits = query(idx, np.array([1, 0], dtype=np.float32), 2)
    assert [(h.instance_id, h.score) for h in hits] == [("b", 1.0), ("a", 0.0)]


def test_build_rejects_duplicates_and_dim_mismatch():
    v2, v3 = EmbeddingVector(np.ones(2)), EmbeddingVector(np.ones(3))
    with pytest.raises(IndexBuildError):
        build_index([("a", v2), ("a", v2)])
    with pytest.raises(IndexBuildError):
        build_index([("a", v2), ("b", v3)])
    idx = build_index([("a", v2)])
    with pytest.raises(IndexBuildError):
        query(idx, v3, 1)


@settings(max_examples=80, deadline=None)
@given(
    data=hnp.arrays(np.float32, st.tuples(st.integers(1, 40), st.integers(1, 6)), elements=st.integers(-3, 3)),
    metric=st.sampled_from(["l2", "cosine"]),
    k=st.integers(1, 45),
    qseed=st.integers(0, 2**32 - 1),
)
def test_query_equals_brute_force(data, metric, k, qseed):
    # small integers make exact ties common, so the id tie-break is exercised
    idx, ids = _index(data, metric)
    q = np.random.default_rng(qseed).integers(-3, 4, size=data.shape[1]).astype(np.float32)
    got = [h.instance_id for h in query(idx, q, k)]
    assert got == brute_force(ids, data, q, metric, k)
    scores = [h.score for h in query(idx, q, k)]
    assert scores == sorted(scores, reverse=True)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 60), dim=st.integers(2, 16), seed=st.integers(0, 2**32 - 1), k=st.integers(1, 20))
def test_unit_vectors_rank_identically_under_both_metrics(n, dim, seed, k):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((n, dim))
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    q = rng.standard_normal(dim)
    q /= np.linalg.norm(q)
    l2, _ = _index(m.astype(np.float32), "l2")
    cos, _ = _index(m.astype(np.float32), "cosine")
    qf = q.astype(np.float32)
    assert [h.instance_id for h in query(l2, qf, k)] == [h.instance_id for h in query(cos, qf, k)]


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    idx, _ = _index(rng.standard_normal((50, 7)).astype(np.float32), "cosine", [f"é{i}" for i in range(50)])
    p = tmp_path / "x.eeix"
    save_index(idx, p)
    back = load_index(p)
    assert back == idx
    buf = io.BytesIO()
    save_index(back, buf)
    assert buf.getvalue() == p.read_bytes()


def test_file_layout(tmp_path):
    idx, _ = _index(np.array([[1.5, -2.0]], dtype=np.float32), "cosine", ["ab"])
    buf = io.BytesIO()
    save_index(idx, buf)
    data = buf.getvalue()
    assert data[:4] == b"EEIX"
    assert struct.unpack_from("<IBIQ", data, 4) == (1, 1, 2, 1)
    assert struct.unpack_from("<I", data, 21) == (2,)
    assert data[25:27] == b"ab"
    assert struct.unpack_from("<2f", data, 27) == (1.5, -2.0)
    assert struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[:-4])
    assert read_header(data) == (1, "cosine", 2, 1)


def test_corruption_and_truncation_raise_checksum_error():
    idx, _ = _index(np.eye(5, dtype=np.float32))
    buf = io.BytesIO()
    save_index(idx, buf)
    data = bytearray(buf.getvalue())
    flipped = bytearray(data)
    flipped[-10] ^= 0xFF
    with pytest.raises(ChecksumError):
        load_index(bytes(flipped))
    with pytest.raises(ChecksumError):
        load_index(bytes(data[:-7]))


def test_bad_magic_and_version():
    with pytest.raises(IndexFormatError):
        load_index(b"NOPE" + b"\0" * 40)
    idx, _ = _index(np.eye(2, dtype=np.float32))
    buf = io.BytesIO()
    save_index(idx, buf)
    body = bytearray(buf.getvalue()[:-4])
    body[4:8] = struct.pack("<I", 2)
    data = bytes(body) + struct.pack("<I", zlib.crc32(bytes(body)))
    with pytest.raises(IndexFormatError, match="version"):
        load_index(data)
