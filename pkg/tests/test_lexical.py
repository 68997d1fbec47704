import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lexcourt.fusion import RankedList
from lexcourt.lexical import (
    Bm25Params,
    Tokenization,
    bm25_topk,
    build_index,
    load_index,
    save_index,
    tokenize,
)


def oracle_bm25(query, docs, k1=1.2, b=0.75):
    """Independent BM25: per-document loops over raw token lists, no index."""
    token_lists = {doc_id: text.lower().split() for doc_id, text in docs}
    # replicate the alphanumeric tokenizer on space-free synthetic tokens
    n = len(docs)
    avgdl = sum(len(t) for t in token_lists.values()) / n if n else 0.0
    scores = {}
    for doc_id, tokens in token_lists.items():
        score = 0.0
        for term in query.lower().split():
            tf = tokens.count(term)
            if tf == 0:
                continue
            df = sum(1 for other in token_lists.values() if term in other)
            idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
            dl = len(tokens)
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl))
        if score > 0.0:
            scores[doc_id] = score
    return sorted(scores.items(), key=lambda e: (-e[1], e[0]))


class TestTokenize:
    def test_alphanumeric_lowercase(self):
        assert tokenize("The Court, in 2020; held") == ["the", "court", "in", "2020", "held"]

    def test_stopword_removal(self):
        t = Tokenization(stopwords=frozenset({"the"}))
        assert tokenize("The the COURT", t) == ["court"]

    def test_no_lowercase(self):
        t = Tokenization(lowercase=False)
        assert tokenize("The Court", t) == ["The", "Court"]


class TestBuildIndex:
    def test_counts(self):
        index = build_index([("d1", "a b a"), ("d2", "b c")])
        assert index.n_docs == 2
        assert index.doc_lengths == {"d1": 3, "d2": 2}
        assert index.avgdl == 2.5
        assert index.postings["a"] == (("d1", 2),)
        assert index.postings["b"] == (("d1", 1), ("d2", 1))

    def test_duplicate_id_rejected(self):
        with pytest.raises(ValueError, match="duplicate document id: 'd1'"):
            build_index([("d1", "a"), ("d1", "b")])

    def test_empty_corpus(self):
        index = build_index([])
        assert index.n_docs == 0
        assert bm25_topk("anything", index).entries == ()


class TestBm25:
    def test_hand_computed_tiny_corpus(self):
        # three docs; d3 shares no query term and must be excluded
        docs = [("d1", "crown appeal costs"), ("d2", "appeal appeal order"), ("d3", "lease notice")]
        index = build_index([(d, t) for d, t in docs])
        result = bm25_topk("appeal", index, Bm25Params(), k=10, query_id="q")
        expected = oracle_bm25("appeal", docs)
        assert [cid for cid, _ in result.entries] == [cid for cid, _ in expected]
        for (cid, got), (_, want) in zip(result.entries, expected):
            assert got == pytest.approx(want, abs=1e-12)
        assert "d3" not in result.ids()

    def test_zero_score_documents_excluded(self):
        index = build_index([("d1", "x y"), ("d2", "z")])
        result = bm25_topk("missing", index)
        assert result.entries == ()

    def test_tie_breaks_by_id(self):
        # identical documents score identically; order must be by id
        index = build_index([("b", "term"), ("a", "term"), ("c", "term")])
        result = bm25_topk("term", index)
        assert result.ids() == ["a", "b", "c"]

    def test_k_truncates(self):
        index = build_index([(f"d{i}", "term " * (i + 1)) for i in range(5)])
        assert len(bm25_topk("term", index, k=2).entries) == 2

    def test_k_validation(self):
        index = build_index([("d", "a")])
        with pytest.raises(ValueError):
            bm25_topk("a", index, k=0)

    def test_repeated_query_token_accumulates(self):
        index = build_index([("d1", "a a b"), ("d2", "a b b")])
        single = bm25_topk("a", index)
        double = bm25_topk("a a", index)
        for (cid, s1), (cid2, s2) in zip(single.entries, double.entries):
            assert cid == cid2
            assert s2 == pytest.approx(2 * s1)

    def test_returns_ranked_list_type(self):
        index = build_index([("d", "a")])
        result = bm25_topk("a", index, query_id="q9")
        assert isinstance(result, RankedList)
        assert result.query_id == "q9"

    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_matches_brute_force_oracle(self, data):
        vocabulary = [f"w{i}" for i in range(12)]
        n_docs = data.draw(st.integers(1, 12))
        docs = []
        for i in range(n_docs):
            words = data.draw(st.lists(st.sampled_from(vocabulary), min_size=0, max_size=30))
            docs.append((f"d{i:02d}", " ".join(words)))
        query = " ".join(data.draw(st.lists(st.sampled_from(vocabulary), min_size=1, max_size=5)))
        index = build_index(docs)
        got = bm25_topk(query, index, k=len(docs) or 1)
        want = oracle_bm25(query, docs)
        assert [cid for cid, _ in got.entries] == [cid for cid, _ in want]
        for (_, s_got), (_, s_want) in zip(got.entries, want):
            assert abs(s_got - s_want) <= 1e-9


class TestIndexPersistence:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = random.Random(3)
        docs = [
            (f"d{i}", " ".join(rng.choice("abcdefg") for _ in range(rng.randint(1, 20))))
            for i in range(10)
        ]
        index = build_index(docs, Tokenization(stopwords=frozenset({"g"})))
        path = tmp_path / "index.json"
        save_index(index, path)
        loaded = load_index(path)
        assert loaded == index
        save_index(loaded, tmp_path / "again.json")
        assert (tmp_path / "again.json").read_bytes() == path.read_bytes()

    def test_saved_file_is_json(self, tmp_path):
        index = build_index([("d", "a b")])
        save_index(index, tmp_path / "i.json")
        payload = json.loads((tmp_path / "i.json").read_text())
        assert payload["n_docs"] == 1
