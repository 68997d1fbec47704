"""Embedding vectors: similarity search, file persistence, and the service client."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Mapping, Sequence

from .errors import DataFormatError, ServiceError
from .fileio import atomic_write_text
from .fusion import RankedList
from .httpio import DiskCache, post_json, sha256_hex

Vector = tuple[float, ...]


def dot(u: Sequence[float], v: Sequence[float]) -> float:
    if len(u) != len(v):
        raise ValueError(f"dimension mismatch: {len(u)} vs {len(v)}")
    return sum(a * b for a, b in zip(u, v))


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    """Cosine similarity; 0 when either vector has zero norm.

    The result is clamped to [-1, 1]: rounding near the subnormal range can
    push the raw ratio past the mathematical bound.
    """
    num = dot(u, v)
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return max(-1.0, min(1.0, num / (nu * nv)))


@dataclass(frozen=True)
class EmbeddingStore:
    """Fixed-dimension id-to-vector map."""

    dim: int
    vectors: dict[str, Vector]
    source_tag: str = ""

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        for vid, vec in self.vectors.items():
            if len(vec) != self.dim:
                raise ValueError(f"vector {vid!r} has dimension {len(vec)}, expected {self.dim}")
            if not all(math.isfinite(x) for x in vec):
                raise ValueError(f"vector {vid!r} has a non-finite component")

    def __len__(self) -> int:
        return len(self.vectors)


Similarity = Literal["cosine", "dot"]


def topk_similar(
    query_vector: Sequence[float],
    candidates: EmbeddingStore,
    k: int,
    sim: Similarity = "cosine",
    query_id: str = "",
) -> RankedList:
    """Rank the k most similar candidates, ids ascending on score ties."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    measure = cosine if sim == "cosine" else dot
    scored = sorted(
        ((cid, measure(query_vector, vec)) for cid, vec in candidates.vectors.items()),
        key=lambda e: (-e[1], e[0]),
    )
    return RankedList(query_id=query_id, entries=tuple(scored[:k]))


def topk_similar_by_id(
    query_id: str,
    queries: EmbeddingStore,
    candidates: EmbeddingStore,
    k: int,
    sim: Similarity = "cosine",
) -> RankedList:
    if query_id not in queries.vectors:
        raise KeyError(f"unknown query id: {query_id!r}")
    return topk_similar(queries.vectors[query_id], candidates, k, sim, query_id)


def score_table_from_store(
    queries: EmbeddingStore,
    candidates: EmbeddingStore,
    scorer_name: str,
    sim: Similarity = "cosine",
    candidate_pool: Mapping[str, Sequence[str]] | None = None,
) -> "ScoreTable":
    """Similarity scores for every query against its candidate pool.

    Without ``candidate_pool`` each query scores the full candidate store.
    """
    from .fusion import ScoreTable

    measure = cosine if sim == "cosine" else dot
    scores: dict[str, dict[str, float]] = {}
    for qid, qvec in queries.vectors.items():
        if candidate_pool is None:
            pool = candidates.vectors.keys()
        else:
            pool = candidate_pool.get(qid, ())
        row = {}
        for cid in pool:
            if cid not in candidates.vectors:
                raise KeyError(f"candidate {cid!r} missing from store")
            row[cid] = measure(qvec, candidates.vectors[cid])
        scores[qid] = row
    return ScoreTable(scorer_name, scores)


# ---------------------------------------------------------------------------
# Vector files: "dim=<D>" header, then one "id<TAB>x1 x2 ..." line per vector
# ---------------------------------------------------------------------------


def write_vectors(store: EmbeddingStore, path: str | Path) -> None:
    lines = [f"dim={store.dim}"]
    for vid in sorted(store.vectors):
        # repr round-trips doubles exactly
        lines.append(vid + "\t" + " ".join(repr(x) for x in store.vectors[vid]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_vectors(path: str | Path, source_tag: str = "") -> EmbeddingStore:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("dim="):
        raise DataFormatError(f"{path}: missing dim= header")
    try:
        dim = int(lines[0][len("dim="):])
    except ValueError as exc:
        raise DataFormatError(f"{path}: bad dim header {lines[0]!r}") from exc
    vectors: dict[str, Vector] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if "\t" not in line:
            raise DataFormatError(f"{path}:{lineno}: expected id<TAB>components")
        vid, _, rest = line.partition("\t")
        if vid in vectors:
            raise DataFormatError(f"{path}:{lineno}: duplicate vector id {vid!r}")
        try:
            vec = tuple(float(x) for x in rest.split())
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: bad vector component") from exc
        if len(vec) != dim:
            raise DataFormatError(f"{path}:{lineno}: expected {dim} components, got {len(vec)}")
        vectors[vid] = vec
    return EmbeddingStore(dim=dim, vectors=vectors, source_tag=source_tag or path.stem)


# ---------------------------------------------------------------------------
# Embedding service client
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmbeddingServiceConfig:
    endpoint: str
    model: str
    batch_size: int = 32
    concurrency: int = 4
    max_retries: int = 3
    timeout: float = 30.0
    retry_backoff: float = 0.5
    cache_dir: str | None = None

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.concurrency < 1:
            raise ValueError(f"concurrency must be >= 1, got {self.concurrency}")


class EmbeddingClient:
    """Batched, cached access to an embeddings endpoint.

    Vectors are cached per text under a key derived from the model name and
    the text hash, so reruns touch the service only for unseen inputs.
    """

    def __init__(self, config: EmbeddingServiceConfig):
        self.config = config
        self.cache = DiskCache(config.cache_dir)
        self.requests_made = 0
        self.cache_hits = 0

    def _cache_key(self, text: str) -> str:
        return sha256_hex(f"embedding\0{self.config.model}\0{sha256_hex(text)}")

    def embed(self, texts: Sequence[str]) -> list[Vector]:
        """Embed texts in order; dimensions must agree across the whole call."""
        if not texts:
            raise ValueError("texts must be non-empty")
        results: list[Vector | None] = [None] * len(texts)
        pending: list[int] = []
        for i, text in enumerate(texts):
            cached = self.cache.get(self._cache_key(text))
            if cached is not None:
                results[i] = tuple(cached["embedding"])
                self.cache_hits += 1
            else:
                pending.append(i)

        batches = [
            pending[start:start + self.config.batch_size]
            for start in range(0, len(pending), self.config.batch_size)
        ]
        if batches:
            with ThreadPoolExecutor(max_workers=self.config.concurrency) as pool:
                fetched = list(pool.map(lambda b: self._fetch([texts[i] for i in b]), batches))
            for batch, vectors in zip(batches, fetched):
                for i, vec in zip(batch, vectors):
                    results[i] = vec
                    self.cache.put(self._cache_key(texts[i]), {"embedding": list(vec)})

        final = [vec for vec in results if vec is not None]
        if len(final) != len(texts):
            raise ServiceError("embedding service returned fewer vectors than requested")
        dims = {len(vec) for vec in final}
        if len(dims) > 1:
            raise ServiceError(f"inconsistent embedding dimensions: {sorted(dims)}")
        return final

    def embed_store(self, items: Mapping[str, str], source_tag: str = "") -> EmbeddingStore:
        ids = list(items)
        vectors = self.embed([items[i] for i in ids])
        return EmbeddingStore(
            dim=len(vectors[0]),
            vectors=dict(zip(ids, vectors)),
            source_tag=source_tag or self.config.model,
        )

    def _fetch(self, batch: list[str]) -> list[Vector]:
        payload = {"model": self.config.model, "input": batch}
        body = post_json(
            self.config.endpoint,
            payload,
            timeout=self.config.timeout,
            max_retries=self.config.max_retries,
            backoff=self.config.retry_backoff,
        )
        self.requests_made += 1
        try:
            rows = sorted(body["data"], key=lambda r: r.get("index", 0))
            vectors = [tuple(float(x) for x in row["embedding"]) for row in rows]
        except (KeyError, TypeError) as exc:
            raise ServiceError("embedding response missing data[].embedding") from exc
        if len(vectors) != len(batch):
            raise ServiceError(
                f"embedding service returned {len(vectors)} vectors for {len(batch)} inputs"
            )
        return vectors


def embed_texts(config: EmbeddingServiceConfig, texts: Sequence[str]) -> list[Vector]:
    return EmbeddingClient(config).embed(texts)
