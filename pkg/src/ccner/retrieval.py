"""Exact k-nearest-neighbor store over corpus-chunk embeddings.

Search is a full linear scan under Euclidean distance; chunks whose source
text equals the query text (by SHA-256 of the characters) are excluded, so a
query never retrieves itself.  Distance ties keep insertion order.

Store file layout (little-endian): magic ``CCNRVST1``, then u64 version, u64
dimension, u64 row count; per row a u64 chunk-id byte length, the UTF-8
chunk id, the 32-byte text hash, and d float64 values.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .textdata import Document, Sequence, segment

_MAGIC = b"CCNRVST1"
_VERSION = 1


@dataclass
class EmbeddingVector:
    values: np.ndarray
    chunk_id: str
    text_hash: bytes

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("embedding values must be one-dimensional")
        if not np.isfinite(self.values).all():
            raise ValueError(f"non-finite embedding for chunk {self.chunk_id!r}")
        if len(self.text_hash) != 32:
            raise ValueError("text_hash must be a 32-byte digest")


@dataclass
class VectorStore:
    dimension: int
    rows: list[EmbeddingVector] = field(default_factory=list)

    def add(self, row: EmbeddingVector) -> None:
        if row.values.shape[0] != self.dimension:
            raise ValueError(
                f"row dimension {row.values.shape[0]} != store dimension {self.dimension}"
            )
        self.rows.append(row)

    def matrix(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, self.dimension))
        return np.stack([r.values for r in self.rows])

    def __len__(self) -> int:
        return len(self.rows)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, VectorStore)
            and self.dimension == other.dimension
            and len(self.rows) == len(other.rows)
            and all(
                a.chunk_id == b.chunk_id
                and a.text_hash == b.text_hash
                and np.array_equal(a.values, b.values)
                for a, b in zip(self.rows, other.rows)
            )
        )


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 20
    d: int = 768
    chunk_len: int = 510

    def __post_init__(self):
        if self.k < 1 or self.d < 1 or self.chunk_len < 1:
            raise ValueError("k, d and chunk_len must all be >= 1")


def text_digest(text: str) -> bytes:
    return hashlib.sha256(text.encode("utf-8")).digest()


def l2_distance(t, c) -> float:
    t = np.asarray(t, dtype=float)
    c = np.asarray(c, dtype=float)
    if t.shape != c.shape:
        raise ValueError(f"dimension mismatch: {t.shape} vs {c.shape}")
    diff = t - c
    return float(np.sqrt(np.dot(diff, diff)))


def corpus_chunks(docs: Iterable[Document], chunk_len: int) -> list[Sequence]:
    """Fixed-width chunks of every document, in document order; the chunk id
    is '<doc id>@<token offset>'."""
    chunks = []
    for doc in docs:
        chunks.extend(segment(doc, chunk_len))
    return chunks


def chunk_id(chunk: Sequence) -> str:
    return f"{chunk.doc_id}@{chunk.offset}"


def index_corpus(
    docs: Iterable[Document],
    embedder: Callable[[Sequence], np.ndarray],
    cfg: RetrievalConfig,
) -> VectorStore:
    """Embed every chunk of every document into a fresh store."""
    store = VectorStore(dimension=cfg.d)
    for chunk in corpus_chunks(docs, cfg.chunk_len):
        vec = np.asarray(embedder(chunk), dtype=np.float64)
        if vec.shape != (cfg.d,):
            raise ValueError(
                f"embedder returned shape {vec.shape}, expected ({cfg.d},)"
            )
        store.add(EmbeddingVector(vec, chunk_id(chunk), text_digest(chunk.text)))
    return store


def search(
    store: VectorStore,
    query_vec: np.ndarray,
    query_text_hash: bytes,
    k: int,
) -> list[tuple[str, float]]:
    """Top-k non-identical rows by ascending L2 distance.

    Rows whose text hash equals the query's are excluded.  Returns up to k
    (chunk_id, distance) pairs; ties keep insertion order.
    """
    query_vec = np.asarray(query_vec, dtype=float)
    if query_vec.shape != (store.dimension,):
        raise ValueError(
            f"query dimension {query_vec.shape} != store dimension {store.dimension}"
        )
    if not store.rows:
        return []
    eligible = [i for i, r in enumerate(store.rows) if r.text_hash != query_text_hash]
    if not eligible:
        return []
    mat = store.matrix()[eligible]
    diff = mat - query_vec
    dists = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    order = np.argsort(dists, kind="stable")[:k]
    return [(store.rows[eligible[i]].chunk_id, float(dists[i])) for i in order]


def save_store(store: VectorStore, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQQ", _VERSION, store.dimension, len(store.rows)))
        for row in store.rows:
            cid = row.chunk_id.encode("utf-8")
            fh.write(struct.pack("<Q", len(cid)))
            fh.write(cid)
            fh.write(row.text_hash)
            fh.write(row.values.astype("<f8").tobytes())


def load_store(path) -> VectorStore:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"not a vector store file (bad magic {magic!r})")
        version, dim, count = struct.unpack("<QQQ", fh.read(24))
        if version != _VERSION:
            raise ValueError(f"unsupported store version {version}")
        store = VectorStore(dimension=int(dim))
        for _ in range(count):
            (id_len,) = struct.unpack("<Q", fh.read(8))
            cid = fh.read(id_len).decode("utf-8")
            digest = fh.read(32)
            values = np.frombuffer(fh.read(8 * dim), dtype="<f8").astype(np.float64)
            store.add(EmbeddingVector(values, cid, digest))
    return store
