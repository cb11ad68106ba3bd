import math

import numpy as np
import pytest

from cnir.core.exceptions import DataFormatError, DuplicateIdError, UnknownDocumentError
from cnir.schemas.corpus import Document
from cnir.services.retrieval import (
    Bm25Ranker,
    bm25_score,
    build_index,
    load_index,
    retrieve_topk,
    save_index,
)


def _brute_force(docs, query, k1=1.2, b=0.75):
    """BM25 straight from the definition, one document at a time."""
    n = len(docs)
    avgdl = sum(len(d.tokens) for d in docs) / n
    scores = {}
    for doc in docs:
        total = 0.0
        for term in query:
            tf = doc.tokens.count(term)
            if not tf:
                continue
            df = sum(1 for d in docs if term in d.tokens)
            idf = math.log((n - df + 0.5) / (df + 0.5) + 1.0)
            total += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(doc.tokens) / avgdl))
        if any(term in doc.tokens for term in query):
            scores[doc.doc_id] = total
    return sorted(scores.items(), key=lambda item: (-item[1], item[0]))


class TestIndex:
    def test_statistics(self, toy_docs):
        index = build_index(toy_docs)
        assert index.doc_count == 5
        assert index.total_terms == 10
        assert index.avg_doc_length == pytest.approx(2.0)
        assert index.df("apple") == 2
        assert index.tf("apple", "d1") == 2
        assert index.collection_frequency("cherry") == 2
        assert index.postings["apple"] == [("d1", 2), ("d4", 1)]

    def test_idf_never_negative(self):
        docs = [Document(doc_id=f"d{i}", tokens=("common",)) for i in range(10)]
        assert build_index(docs).idf("common") > 0.0

    def test_duplicate_doc(self):
        with pytest.raises(DuplicateIdError):
            build_index([Document(doc_id="d", tokens=("a",)), Document(doc_id="d", tokens=("b",))])

    def test_save_load(self, tmp_path, toy_docs):
        index = build_index(toy_docs)
        save_index(index, tmp_path / "index.json")
        loaded = load_index(tmp_path / "index.json")
        assert loaded.postings == index.postings
        assert loaded.doc_lengths == index.doc_lengths

    def test_load_rejects_other_format(self, tmp_path):
        (tmp_path / "index.json").write_text('{"format": "other", "version": 1}')
        with pytest.raises(DataFormatError):
            load_index(tmp_path / "index.json")


class TestRetrieve:
    def test_unknown_document(self, toy_docs):
        with pytest.raises(UnknownDocumentError):
            bm25_score(build_index(toy_docs), ["apple"], "nope")

    def test_no_matching_term(self, toy_docs):
        assert len(retrieve_topk(build_index(toy_docs), ["kiwi"], 5)) == 0

    def test_k_caps_length(self, toy_docs):
        ranked = retrieve_topk(build_index(toy_docs), ["apple", "cherry", "banana"], 2, query_id="q")
        assert len(ranked) == 2
        assert ranked.query_id == "q"

    def test_matches_bm25_score_exactly(self, toy_docs):
        index = build_index(toy_docs)
        query = ["cherry", "apple", "apple"]
        for doc_id, value in retrieve_topk(index, query, 10).entries:
            assert value == bm25_score(index, query, doc_id)

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(5)
        words = [f"t{i}" for i in range(30)]
        docs = [
            Document(doc_id=f"d{i:03d}", tokens=tuple(rng.choice(words, size=rng.integers(1, 8))))
            for i in range(200)
        ]
        index = build_index(docs)
        for _ in range(50):
            query = list(rng.choice(words, size=rng.integers(1, 4)))
            ranked = retrieve_topk(index, query, 200)
            expected = _brute_force(docs, query)
            assert ranked.doc_ids == [d for d, _ in expected]
            np.testing.assert_allclose([s for _, s in ranked.entries], [s for _, s in expected], rtol=1e-12)

    def test_ties_by_doc_id(self):
        docs = [Document(doc_id=d, tokens=("x", "y")) for d in ("c", "a", "b")]
        assert retrieve_topk(build_index(docs), ["x"], 3).doc_ids == ["a", "b", "c"]

    def test_monotone_in_term_frequency(self):
        # equal lengths, so only tf of the query term varies
        docs = [
            Document(doc_id=f"d{tf}", tokens=("apple",) * tf + tuple(f"f{tf}_{i}" for i in range(6 - tf)))
            for tf in range(6)
        ]
        index = build_index(docs)
        scores = [bm25_score(index, ["apple"], f"d{tf}") for tf in range(6)]
        assert scores[0] == 0.0
        assert all(lo < hi for lo, hi in zip(scores, scores[1:]))


class TestBm25Ranker:
    def test_scores_like_bm25(self, toy_docs):
        index = build_index(toy_docs)
        ranker = Bm25Ranker(index)
        assert not ranker.trainable
        assert ranker.score(["apple"], toy_docs[0]) == bm25_score(index, ["apple"], "d1")
