"""Inverted index and Okapi BM25 first-stage retrieval."""
import json
import logging
import math
from collections import Counter
from collections.abc import Iterable, Sequence
from pathlib import Path

from cnir import FORMAT_VERSION
from cnir.core.exceptions import DataFormatError, DuplicateIdError, UnknownDocumentError
from cnir.schemas.corpus import Document, RankedList

logger = logging.getLogger(__name__)

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75


class InvertedIndex:
    """Postings sorted by doc_id plus per-document lengths."""

    def __init__(self, postings: dict[str, list[tuple[str, int]]], doc_lengths: dict[str, int]):
        self.postings = postings
        self.doc_lengths = doc_lengths
        self.doc_count = len(doc_lengths)
        self.total_terms = sum(doc_lengths.values())
        self.avg_doc_length = self.total_terms / self.doc_count if self.doc_count else 0.0
        self._doc_tf: dict[str, dict[str, int]] = {doc_id: {} for doc_id in doc_lengths}
        self._cf: dict[str, int] = {}
        for term, plist in postings.items():
            self._cf[term] = sum(tf for _, tf in plist)
            for doc_id, tf in plist:
                self._doc_tf[doc_id][term] = tf

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self.doc_lengths

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def tf(self, term: str, doc_id: str) -> int:
        return self._doc_tf[doc_id].get(term, 0)

    def collection_frequency(self, term: str) -> int:
        return self._cf.get(term, 0)

    def idf(self, term: str) -> float:
        """ln((N - df + 0.5) / (df + 0.5) + 1); never negative."""
        df = self.df(term)
        return math.log((self.doc_count - df + 0.5) / (df + 0.5) + 1.0)

    def term_weight(self, idf: float, tf: int, doc_id: str, k1: float, b: float) -> float:
        """BM25 contribution of one query term occurrence."""
        if tf == 0:
            return 0.0
        norm = 1.0 - b + b * self.doc_lengths[doc_id] / self.avg_doc_length
        return idf * tf * (k1 + 1.0) / (tf + k1 * norm)


def build_index(corpus: Iterable[Document]) -> InvertedIndex:
    """Count term frequencies; postings are sorted by doc_id."""
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    for doc in corpus:
        if doc.doc_id in doc_lengths:
            raise DuplicateIdError(f"duplicate doc_id '{doc.doc_id}'")
        doc_lengths[doc.doc_id] = len(doc.tokens)
        for term, tf in Counter(doc.tokens).items():
            postings.setdefault(term, []).append((doc.doc_id, tf))
    for plist in postings.values():
        plist.sort()
    index = InvertedIndex(postings, doc_lengths)
    logger.debug("Indexed %d documents, %d terms", index.doc_count, len(postings))
    return index


def bm25_score(
    index: InvertedIndex,
    query_tokens: Sequence[str],
    doc_id: str,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> float:
    """Score one document; terms absent from it contribute 0."""
    if doc_id not in index:
        raise UnknownDocumentError(doc_id)
    score = 0.0
    for term in query_tokens:
        tf = index.tf(term, doc_id)
        if tf:
            score += index.term_weight(index.idf(term), tf, doc_id, k1, b)
    return score


def retrieve_topk(
    index: InvertedIndex,
    query_tokens: Sequence[str],
    k: int,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
    query_id: str = "",
) -> RankedList:
    """Term-at-a-time top-k; ties broken by ascending doc_id.

    Accumulation follows query-token order per document, the same order
    bm25_score adds in, so both give identical floats.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scores: dict[str, float] = {}
    for term in query_tokens:
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for doc_id, tf in plist:
            scores[doc_id] = scores.get(doc_id, 0.0) + index.term_weight(idf, tf, doc_id, k1, b)
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))[:k]
    return RankedList(query_id=query_id, entries=tuple(ranked))


class Bm25Ranker:
    """BM25 as a non-trainable reranker over a fixed pool."""

    trainable = False

    def __init__(self, index: InvertedIndex, k1: float = DEFAULT_K1, b: float = DEFAULT_B):
        self.index = index
        self.k1 = k1
        self.b = b

    def score(self, query_tokens: Sequence[str], document: Document) -> float:
        return bm25_score(self.index, query_tokens, document.doc_id, self.k1, self.b)

    def digest(self) -> str:
        return f"bm25:k1={self.k1}:b={self.b}"


def save_index(index: InvertedIndex, path: str | Path) -> None:
    """JSON with a version field; keys sorted for stable bytes."""
    payload = {
        "format": "cnir-index",
        "version": FORMAT_VERSION,
        "doc_lengths": index.doc_lengths,
        "postings": {term: [[d, tf] for d, tf in plist] for term, plist in index.postings.items()},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, ensure_ascii=False), encoding="utf-8")


def load_index(path: str | Path) -> InvertedIndex:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataFormatError(f"invalid index file: {e.msg}", path) from e
    if payload.get("format") != "cnir-index" or payload.get("version") != FORMAT_VERSION:
        raise DataFormatError(
            f"unsupported index format {payload.get('format')} v{payload.get('version')}", path
        )
    postings = {
        term: [(d, int(tf)) for d, tf in plist] for term, plist in payload["postings"].items()
    }
    return InvertedIndex(postings, {d: int(n) for d, n in payload["doc_lengths"].items()})
