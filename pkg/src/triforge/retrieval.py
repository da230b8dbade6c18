"""Background selection by embedding similarity.

An immutable id-indexed store of f32 vectors is scored against query
embeddings with cosine similarity; per-query score vectors are averaged
and the best-scoring background index wins. All dot products and means
accumulate in f64, and scores are clamped into [-1, 1] after evaluation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimMismatch,
    DuplicateId,
    EmptyList,
    EmptyStore,
    FormatError,
    LengthMismatch,
    MagicMismatch,
    MissingFile,
    TruncatedPayload,
    ZeroNorm,
    ZeroNormVector,
)

EMB_MAGIC = b"EMB1"


@dataclass(frozen=True)
class EmbeddingStore:
    """Ordered id list plus an (n, d) f32 matrix, row i belonging to ids[i]."""

    ids: list[str]
    vectors: np.ndarray
    _norms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if v.ndim != 2:
            raise FormatError(f"vectors must be 2-D, got shape {v.shape}")
        if len(self.ids) != v.shape[0]:
            raise LengthMismatch("ids and vector rows differ in count")
        if len(set(self.ids)) != len(self.ids):
            raise DuplicateId("embedding store ids must be unique")
        if not np.isfinite(v).all():
            raise FormatError("embedding store contains non-finite entries")
        norms = np.linalg.norm(v.astype(np.float64), axis=1)
        if (norms == 0.0).any():
            raise ZeroNormVector("embedding store contains a zero vector")
        v.flags.writeable = False
        norms.flags.writeable = False
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "_norms", norms)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]


def save_store(store: EmbeddingStore, path) -> None:
    """Write the EMB1 binary layout: magic, u32 count, u32 dim, f32 LE
    matrix, then length-prefixed UTF-8 ids."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    v = store.vectors.astype("<f4", copy=False)
    with open(path, "wb") as f:
        f.write(EMB_MAGIC)
        f.write(struct.pack("<II", len(store), store.dim))
        f.write(v.tobytes())
        for sid in store.ids:
            raw = sid.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)


def load_store(path) -> EmbeddingStore:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as e:
        raise MissingFile(str(path)) from e
    if len(raw) < 12 or raw[:4] != EMB_MAGIC:
        raise MagicMismatch(f"{path}: bad EMB1 header")
    count, dim = struct.unpack_from("<II", raw, 4)
    off = 12
    nbytes = count * dim * 4
    if len(raw) < off + nbytes:
        raise TruncatedPayload(f"{path}: vector payload truncated")
    vectors = (
        np.frombuffer(raw, dtype="<f4", count=count * dim, offset=off)
        .reshape(count, dim)
        .astype(np.float32, copy=True)
    )
    off += nbytes
    ids = []
    for _ in range(count):
        if len(raw) < off + 4:
            raise TruncatedPayload(f"{path}: id table truncated")
        (ln,) = struct.unpack_from("<I", raw, off)
        off += 4
        if len(raw) < off + ln:
            raise TruncatedPayload(f"{path}: id table truncated")
        ids.append(raw[off : off + ln].decode("utf-8"))
        off += ln
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return EmbeddingStore(ids=ids, vectors=vectors)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, f64 accumulation, clamped into [-1, 1]."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimMismatch(f"vector dims {a.shape[0]} vs {b.shape[0]}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroNorm("cosine of a zero vector is undefined")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def score_vector(query: np.ndarray, targets: EmbeddingStore) -> np.ndarray:
    """Cosine of the query against every store row, as f32."""
    if len(targets) == 0:
        raise EmptyStore("score_vector against an empty store")
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.shape[0] != targets.dim:
        raise DimMismatch(f"query dim {q.shape[0]} vs store dim {targets.dim}")
    nq = np.linalg.norm(q)
    if nq == 0.0:
        raise ZeroNorm("cosine of a zero vector is undefined")
    dots = targets.vectors.astype(np.float64) @ q
    scores = dots / (nq * targets._norms)
    return np.clip(scores, -1.0, 1.0).astype(np.float32)


def aggregate(scores: list[np.ndarray]) -> np.ndarray:
    """Elementwise arithmetic mean of score vectors (f64 accumulation)."""
    if len(scores) == 0:
        raise EmptyList("cannot aggregate zero score vectors")
    lengths = {len(s) for s in scores}
    if len(lengths) != 1:
        raise LengthMismatch(f"score vectors of differing lengths {sorted(lengths)}")
    acc = np.zeros(lengths.pop(), dtype=np.float64)
    for s in scores:
        acc += np.asarray(s, dtype=np.float64)
    return (acc / len(scores)).astype(np.float32)


def select_background(
    avg: np.ndarray, targets: EmbeddingStore, select: str = "max"
) -> tuple[str, int, float]:
    """Pick the best background: argmax of mean cosine similarity by
    default, with an argmin override for ablations. Ties break toward
    the lowest index."""
    if len(targets) == 0:
        raise EmptyStore("selection against an empty store")
    if len(avg) != len(targets):
        raise LengthMismatch("score vector length differs from store size")
    idx = int(np.argmin(avg)) if select == "min" else int(np.argmax(avg))
    return targets.ids[idx], idx, float(avg[idx])
