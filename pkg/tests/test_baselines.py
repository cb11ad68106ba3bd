import math
from collections import Counter

import numpy as np
import pytest

from cnir.schemas.corpus import Document, Query, RankedList
from cnir.services.baselines import relevance_model, rm_expand, tfidf_expand, tfidf_scores
from cnir.services.retrieval import build_index


def _prf(*doc_ids):
    return RankedList(query_id="q1", entries=tuple((d, float(len(doc_ids) - i)) for i, d in enumerate(doc_ids)))


class TestTfidf:
    def test_hand_example(self, toy_docs, toy_query):
        index = build_index(toy_docs)
        docs = {d.doc_id: d for d in toy_docs}
        expanded = tfidf_expand(toy_query, [docs["d2"], docs["d3"]], index, k=3)
        # date, elder and fig share df 1 and tie on score; banana (df 2) loses
        assert expanded == ("apple", "cherry", "date", "elder", "fig")

    def test_query_terms_never_added(self, toy_docs, toy_query):
        index = build_index(toy_docs)
        scores = tfidf_scores(toy_query, toy_docs[:2], index)
        assert set(scores) == {"banana"}
        assert scores["banana"] == pytest.approx(2 * math.log(5 / 2))

    def test_no_feedback(self, toy_docs, toy_query):
        assert tfidf_expand(toy_query, [], build_index(toy_docs)) == toy_query.tokens

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(8)
        words = [f"t{i}" for i in range(15)]
        docs = [Document(doc_id=f"d{i:02d}", tokens=tuple(rng.choice(words, size=rng.integers(1, 9)))) for i in range(40)]
        index = build_index(docs)
        for _ in range(30):
            query = Query(query_id="q", tokens=tuple(rng.choice(words, size=2)))
            prf = [docs[i] for i in rng.choice(40, size=3, replace=False)]
            concat = [t for d in prf for t in d.tokens if t not in query.tokens]
            expected = {
                t: concat.count(t) * math.log(40 / sum(1 for d in docs if t in d.tokens)) for t in set(concat)
            }
            got = tfidf_scores(query, prf, index)
            assert got.keys() == expected.keys()
            for term in expected:
                assert got[term] == pytest.approx(expected[term], rel=1e-12)
            top = sorted(expected, key=lambda t: (-expected[t], t))[:3]
            assert tfidf_expand(query, prf, index, 3) == query.tokens + tuple(top)


class TestRelevanceModel:
    def test_sums_to_one(self, toy_docs, toy_query):
        index = build_index(toy_docs)
        model = relevance_model(toy_query.tokens, toy_docs[:3], index)
        assert sum(model.values()) == pytest.approx(1.0)

    def test_single_document_is_maximum_likelihood(self, toy_docs):
        index = build_index(toy_docs)
        model = relevance_model(("apple",), [toy_docs[0]], index)
        assert model == pytest.approx({"apple": 2 / 3, "banana": 1 / 3})

    def test_query_likelihood_weighting(self):
        docs = [
            Document(doc_id="a", tokens=("q", "x")),
            Document(doc_id="b", tokens=("y", "z")),
        ]
        index = build_index(docs)
        model = relevance_model(("q",), docs, index, mu=1.0)
        assert model["x"] > model["y"]

    def test_unseen_query_terms_ignored(self, toy_docs):
        index = build_index(toy_docs)
        with_unseen = relevance_model(("apple", "kiwi"), toy_docs[:2], index)
        assert with_unseen == pytest.approx(relevance_model(("apple",), toy_docs[:2], index))

    def test_empty_feedback(self, toy_docs):
        assert relevance_model(("apple",), [toy_docs[4]], build_index(toy_docs)) == {}

    def test_manual_weights(self, toy_docs):
        index = build_index(toy_docs)
        prf = [toy_docs[0], toy_docs[1]]
        mu = 10.0
        loglik = []
        for doc in prf:
            counts = Counter(doc.tokens)
            loglik.append(sum(
                math.log((counts[t] + mu * index.collection_frequency(t) / index.total_terms) / (len(doc.tokens) + mu))
                for t in ("apple", "cherry")
            ))
        w = np.exp(np.array(loglik) - max(loglik))
        w /= w.sum()
        model = relevance_model(("apple", "cherry"), prf, index, mu)
        assert model["banana"] == pytest.approx(w[0] / 3 + w[1] / 2)


class TestRm3:
    def test_lambda_one_keeps_query(self, toy_docs, toy_query):
        docs = {d.doc_id: d for d in toy_docs}
        assert rm_expand(toy_query, _prf("d1", "d2"), docs, build_index(toy_docs), lam=1.0) == toy_query.tokens

    def test_appends_top_terms(self, toy_docs, toy_query):
        docs = {d.doc_id: d for d in toy_docs}
        expanded = rm_expand(toy_query, _prf("d1", "d2", "d3"), docs, build_index(toy_docs), k=2)
        assert expanded[:2] == toy_query.tokens
        assert len(expanded) == 4
        assert expanded[2] == "banana"
        assert not set(expanded[2:]) & set(toy_query.tokens)

    def test_empty_feedback(self, toy_docs, toy_query):
        docs = {d.doc_id: d for d in toy_docs}
        assert rm_expand(toy_query, _prf(), docs, build_index(toy_docs)) == toy_query.tokens
