"""Non-learning expansion baselines: TFIDF term selection and an RM3 relevance model."""
import logging
import math
from collections import Counter
from collections.abc import Mapping, Sequence

import numpy as np

from cnir.schemas.corpus import Document, Query, RankedList
from cnir.services.retrieval import InvertedIndex

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.5
DEFAULT_MU = 10.0


def tfidf_scores(query: Query, prf_docs: Sequence[Document], index: InvertedIndex) -> dict[str, float]:
    """tf(term in the PRF concatenation) * ln(N / df) for every non-query term."""
    query_terms = set(query.tokens)
    tf = Counter(tok for doc in prf_docs for tok in doc.tokens if tok not in query_terms)
    return {
        term: count * math.log(index.doc_count / index.df(term))
        for term, count in tf.items()
        if index.df(term)
    }


def _top_terms(scores: Mapping[str, float], k: int) -> list[str]:
    ranked = sorted(scores.items(), key=lambda ts: (-ts[1], ts[0]))
    return [term for term, _ in ranked[:k]]


def tfidf_expand(
    query: Query,
    prf_docs: Sequence[Document],
    index: InvertedIndex,
    k: int = 3,
) -> tuple[str, ...]:
    """Append the top-K TFIDF terms of the feedback documents to the query."""
    if not prf_docs:
        return query.tokens
    return query.tokens + tuple(_top_terms(tfidf_scores(query, prf_docs, index), k))


def relevance_model(
    query_tokens: Sequence[str],
    prf_docs: Sequence[Document],
    index: InvertedIndex,
    mu: float = DEFAULT_MU,
) -> dict[str, float]:
    """P_rm(w) proportional to sum_d P_ml(w|d) P(q|d), Dirichlet-smoothed P(q|d).

    Query terms unseen in the collection are left out of P(q|d). Documents
    without tokens carry no mass. The result sums to 1 unless every
    feedback document is empty.
    """
    docs = [doc for doc in prf_docs if doc.tokens]
    if not docs:
        return {}
    known = [t for t in query_tokens if index.collection_frequency(t)]
    log_likelihood = np.zeros(len(docs))
    for i, doc in enumerate(docs):
        counts = Counter(doc.tokens)
        for term in known:
            background = index.collection_frequency(term) / index.total_terms
            log_likelihood[i] += math.log((counts[term] + mu * background) / (len(doc.tokens) + mu))
    weights = np.exp(log_likelihood - log_likelihood.max())
    weights /= weights.sum()

    model: dict[str, float] = {}
    for weight, doc in zip(weights, docs):
        length = len(doc.tokens)
        for term, count in Counter(doc.tokens).items():
            model[term] = model.get(term, 0.0) + float(weight) * count / length
    return model


def rm_expand(
    query: Query,
    prf_list: RankedList,
    documents: Mapping[str, Document],
    index: InvertedIndex,
    k: int = 3,
    lam: float = DEFAULT_LAMBDA,
    mu: float = DEFAULT_MU,
) -> tuple[str, ...]:
    """RM3: P'(w) = lam P_ml(w|q) + (1 - lam) P_rm(w); top-K non-query terms with P' > 0."""
    prf_docs = [documents[d] for d in prf_list.doc_ids]
    model = relevance_model(query.tokens, prf_docs, index, mu)
    if not model:
        return query.tokens
    query_terms = set(query.tokens)
    # query terms have P_ml(w|q) > 0 but are never appended, so only the RM part matters
    scores = {
        term: (1.0 - lam) * p
        for term, p in model.items()
        if term not in query_terms and (1.0 - lam) * p > 0.0
    }
    return query.tokens + tuple(_top_terms(scores, k))
