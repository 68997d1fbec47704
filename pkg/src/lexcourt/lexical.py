"""Tokenization, inverted index, and BM25 scoring for the lexical pre-ranking stage."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .fileio import atomic_write_text
from .fusion import RankedList

_ALNUM_RE = re.compile(r"[0-9a-zA-Z]+")


@dataclass(frozen=True)
class Tokenization:
    """Deterministic tokenizer settings: lowercased maximal alphanumeric runs."""

    lowercase: bool = True
    stopwords: frozenset[str] = frozenset()


def tokenize(text: str, t: Tokenization = Tokenization()) -> list[str]:
    if t.lowercase:
        text = text.lower()
    tokens = _ALNUM_RE.findall(text)
    if t.stopwords:
        tokens = [tok for tok in tokens if tok not in t.stopwords]
    return tokens


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self) -> None:
        if self.k1 < 0:
            raise ValueError(f"k1 must be >= 0, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must be in [0, 1], got {self.b}")


@dataclass(frozen=True)
class InvertedIndex:
    """Immutable postings over a document collection.

    ``postings`` maps each term to (doc id, term frequency) pairs in document
    insertion order; ``doc_lengths`` maps doc ids to token counts.
    """

    postings: dict[str, tuple[tuple[str, int], ...]]
    doc_lengths: dict[str, int]
    avgdl: float
    n_docs: int
    tokenization: Tokenization = field(default_factory=Tokenization)

    def __post_init__(self) -> None:
        if self.n_docs != len(self.doc_lengths):
            raise ValueError("n_docs must equal the number of indexed documents")
        expected = (sum(self.doc_lengths.values()) / self.n_docs) if self.n_docs else 0.0
        if abs(self.avgdl - expected) > 1e-9:
            raise ValueError(f"avgdl {self.avgdl} inconsistent with doc_lengths (expected {expected})")
        for term, plist in self.postings.items():
            if any(tf < 1 for _, tf in plist):
                raise ValueError(f"postings for {term!r} contain a frequency < 1")


def build_index(
    docs: list[tuple[str, str]],
    tokenization: Tokenization = Tokenization(),
) -> InvertedIndex:
    """Build an inverted index over (id, text) pairs.

    Rebuilding from the same input yields an identical index. A duplicate
    document id is rejected, naming the offender.
    """
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    for doc_id, text in docs:
        if doc_id in doc_lengths:
            raise ValueError(f"duplicate document id: {doc_id!r}")
        tokens = tokenize(text, tokenization)
        doc_lengths[doc_id] = len(tokens)
        freqs: dict[str, int] = {}
        for tok in tokens:
            freqs[tok] = freqs.get(tok, 0) + 1
        for term in sorted(freqs):
            postings.setdefault(term, []).append((doc_id, freqs[term]))
    n = len(doc_lengths)
    avgdl = (sum(doc_lengths.values()) / n) if n else 0.0
    return InvertedIndex(
        postings={t: tuple(p) for t, p in sorted(postings.items())},
        doc_lengths=doc_lengths,
        avgdl=avgdl,
        n_docs=n,
        tokenization=tokenization,
    )


def idf(index: InvertedIndex, term: str) -> float:
    """Smoothed inverse document frequency: ln(1 + (N - df + 0.5) / (df + 0.5)).

    The +1 inside the logarithm keeps every idf (and hence every BM25 score)
    non-negative.
    """
    df = len(index.postings.get(term, ()))
    return math.log(1.0 + (index.n_docs - df + 0.5) / (df + 0.5))


def bm25_topk(
    query: str,
    index: InvertedIndex,
    p: Bm25Params = Bm25Params(),
    k: int = 10,
    query_id: str = "",
) -> RankedList:
    """Score the index against a query and return the top-k documents.

    Each query token occurrence contributes
    ``idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))``
    for the containing document. Documents scoring zero are excluded; ties
    break by ascending doc id so repeated calls return identical lists.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if index.n_docs == 0:
        return RankedList(query_id=query_id, entries=())

    scores: dict[str, float] = {}
    for term in tokenize(query, index.tokenization):
        plist = index.postings.get(term)
        if not plist:
            continue
        term_idf = idf(index, term)
        for doc_id, tf in plist:
            dl = index.doc_lengths[doc_id]
            norm = p.k1 * (1.0 - p.b + p.b * dl / index.avgdl)
            scores[doc_id] = scores.get(doc_id, 0.0) + term_idf * tf * (p.k1 + 1.0) / (tf + norm)

    ranked = sorted(
        ((doc_id, s) for doc_id, s in scores.items() if s > 0.0),
        key=lambda e: (-e[1], e[0]),
    )
    return RankedList(query_id=query_id, entries=tuple(ranked[:k]))


# ---------------------------------------------------------------------------
# Persistence: a JSON layout that round-trips bit-exactly
# ---------------------------------------------------------------------------


def save_index(index: InvertedIndex, path: str | Path) -> None:
    payload = {
        "postings": {t: [[d, tf] for d, tf in plist] for t, plist in index.postings.items()},
        "doc_lengths": index.doc_lengths,
        "avgdl": index.avgdl,
        "n_docs": index.n_docs,
        "tokenization": {
            "lowercase": index.tokenization.lowercase,
            "stopwords": sorted(index.tokenization.stopwords),
        },
    }
    atomic_write_text(path, json.dumps(payload, sort_keys=True))


def load_index(path: str | Path) -> InvertedIndex:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    tok = payload["tokenization"]
    return InvertedIndex(
        postings={t: tuple((d, tf) for d, tf in plist) for t, plist in payload["postings"].items()},
        doc_lengths=payload["doc_lengths"],
        avgdl=payload["avgdl"],
        n_docs=payload["n_docs"],
        tokenization=Tokenization(lowercase=tok["lowercase"], stopwords=frozenset(tok["stopwords"])),
    )
