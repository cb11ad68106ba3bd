"""MAP, ERR and nDCG@k over ranked lists with graded judgments."""
import logging
import math
from collections.abc import Mapping

from cnir.schemas.corpus import JudgmentSet, RankedList
from cnir.schemas.report import METRIC_NAMES, MetricReport

logger = logging.getLogger(__name__)


def average_precision(ranked: RankedList, judgments: JudgmentSet, rel_threshold: int = 1) -> float:
    """AP with relevant = grade >= rel_threshold.

    The denominator is the judged-relevant count for the query, capped at
    the list length.
    """
    if not len(ranked):
        return 0.0
    denominator = min(judgments.relevant_count(ranked.query_id, rel_threshold), len(ranked))
    if denominator == 0:
        return 0.0
    hits = 0
    total = 0.0
    for rank, doc_id in enumerate(ranked.doc_ids, start=1):
        if judgments.grade(ranked.query_id, doc_id) >= rel_threshold:
            hits += 1
            total += hits / rank
    return total / denominator


def _dcg(grades: list[int]) -> float:
    return sum((2.0 ** g - 1.0) / math.log2(rank + 1) for rank, g in enumerate(grades, start=1))


def ndcg_at_k(ranked: RankedList, judgments: JudgmentSet, k: int) -> float:
    """Exponential-gain nDCG@k; ideal ordering over all judged docs."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ideal = sorted(judgments.judged(ranked.query_id).values(), reverse=True)[:k]
    idcg = _dcg(ideal)
    if idcg == 0.0:
        return 0.0
    grades = [judgments.grade(ranked.query_id, d) for d in ranked.doc_ids[:k]]
    return _dcg(grades) / idcg


def err(ranked: RankedList, judgments: JudgmentSet) -> float:
    """Expected reciprocal rank with stop probability (2^g - 1) / 2^g_max."""
    if judgments.max_grade == 0:
        logger.warning("ERR undefined with max_grade 0; returning 0")
        return 0.0
    scale = 2.0 ** judgments.max_grade
    not_stopped = 1.0
    total = 0.0
    for rank, doc_id in enumerate(ranked.doc_ids, start=1):
        stop = (2.0 ** judgments.grade(ranked.query_id, doc_id) - 1.0) / scale
        total += not_stopped * stop / rank
        not_stopped *= 1.0 - stop
    return total


def reward(ranked: RankedList, judgments: JudgmentSet, rel_threshold: int = 1) -> float:
    """The policy reward: average precision of the reranked pool."""
    return average_precision(ranked, judgments, rel_threshold)


def query_metrics(ranked: RankedList, judgments: JudgmentSet, rel_threshold: int = 1) -> dict[str, float]:
    return {
        "map": average_precision(ranked, judgments, rel_threshold),
        "err": err(ranked, judgments),
        "ndcg@5": ndcg_at_k(ranked, judgments, 5),
        "ndcg@10": ndcg_at_k(ranked, judgments, 10),
    }


def evaluate(
    runs: Mapping[str, RankedList],
    judgments: JudgmentSet,
    rel_threshold: int = 1,
) -> MetricReport:
    """Macro-average over queries that have at least one judgment."""
    per_query: dict[str, dict[str, float]] = {}
    skipped = 0
    for query_id in sorted(runs):
        if not judgments.judged(query_id):
            skipped += 1
            continue
        per_query[query_id] = query_metrics(runs[query_id], judgments, rel_threshold)
    if skipped:
        logger.info("%d queries without judgments excluded from evaluation", skipped)
    n = len(per_query)
    means = {
        name: (sum(values[name] for values in per_query.values()) / n if n else 0.0)
        for name in METRIC_NAMES
    }
    return MetricReport(per_query=per_query, means=means, evaluated=n, skipped=skipped)
