"""Reformulate-then-rerank, shared by the rank command and training-time validation."""
import logging
from collections.abc import Callable, Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import Literal, TypeVar

from cnir.config import Settings, get_settings
from cnir.core.exceptions import UsageError
from cnir.core.rng import stream
from cnir.models.knrm import KnrmParameters, default_kernel_bank
from cnir.models.policy import PolicyParameters
from cnir.schemas.corpus import Document, RankedList
from cnir.schemas.report import MetricReport
from cnir.services.baselines import rm_expand, tfidf_expand
from cnir.services.dataset import Collection, QueryContext
from cnir.services.metrics import evaluate
from cnir.services.ranker_knrm import KnrmRanker, Ranker, rerank
from cnir.services.reformulator import QueryReformulator
from cnir.services.retrieval import Bm25Ranker

logger = logging.getLogger(__name__)

Method = Literal["none", "tfidf", "rm", "rl"]
METHODS = ("none", "tfidf", "rm", "rl")

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """map() that may fan out over threads; results keep input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def initial_knrm(collection: Collection, settings: Settings) -> KnrmParameters:
    bank = default_kernel_bank(settings.KERNELS, settings.KERNEL_SIGMA, settings.EXACT_SIGMA)
    return KnrmParameters.initialize(
        bank, collection.word_emb, stream(settings.SEED, "knrm-init"), settings.TRAIN_EMBEDDINGS
    )


def initial_policy(collection: Collection, settings: Settings) -> PolicyParameters:
    return PolicyParameters.initialize(
        stream(settings.SEED, "policy-init"),
        collection.word_emb.dimension,
        settings.CONV_LAYERS,
        settings.FEATURE_MAPS,
        settings.WINDOW_SIZES,
        settings.TERM_HIDDEN,
        settings.SCORE_HIDDEN,
    )


def build_ranker(
    collection: Collection,
    settings: Settings,
    knrm: KnrmParameters | None = None,
    lr: float | None = None,
) -> Ranker:
    """BM25 or KNRM according to settings.RANKER."""
    if settings.RANKER == "bm25":
        return Bm25Ranker(collection.index, settings.BM25_K1, settings.BM25_B)
    return KnrmRanker(knrm or initial_knrm(collection, settings), lr or settings.LR_PRETRAIN)


def build_reformulator(
    collection: Collection,
    settings: Settings,
    policy: PolicyParameters | None = None,
) -> QueryReformulator:
    return QueryReformulator(
        policy or initial_policy(collection, settings),
        collection.word_emb,
        collection.kg.entity_embeddings if settings.CANDIDATE_SOURCE == "knowledge" else None,
        k=settings.K,
        lr=settings.LR_REFORMULATOR,
        without_replacement=settings.WITHOUT_REPLACEMENT,
        baseline_on=settings.BASELINE_ON,
    )


def reformulate_queries(
    contexts: Sequence[QueryContext],
    method: Method,
    collection: Collection,
    settings: Settings | None = None,
    reformulator: QueryReformulator | None = None,
) -> dict[str, tuple[str, ...]]:
    """Expanded token sequence per query id; 'rl' picks the greedy top-K terms."""
    settings = settings or get_settings()
    if method not in METHODS:
        raise UsageError(f"unknown method '{method}'")
    if method == "rl" and reformulator is None:
        raise UsageError("method 'rl' needs a policy checkpoint")

    def expand(ctx: QueryContext) -> tuple[str, ...]:
        if method == "tfidf":
            return tfidf_expand(ctx.query, ctx.prf_docs, collection.index, settings.K)
        if method == "rm":
            return rm_expand(
                ctx.query, ctx.prf_list, collection.documents, collection.index,
                settings.K, settings.RM_LAMBDA, settings.RM_MU,
            )
        if method == "rl":
            return reformulator.greedy(ctx.query, ctx.candidates).reformulated_query
        return ctx.query.tokens

    expanded = ordered_map(expand, contexts, settings.THREADS)
    changed = sum(1 for ctx, toks in zip(contexts, expanded) if toks != ctx.query.tokens)
    logger.debug("%s: %d/%d queries expanded", method, changed, len(contexts))
    return {ctx.query_id: toks for ctx, toks in zip(contexts, expanded)}


def pipeline_rankings(
    contexts: Sequence[QueryContext],
    reformulated: Mapping[str, Sequence[str]],
    ranker: Ranker,
    documents: Mapping[str, Document],
    threads: int = 1,
) -> dict[str, RankedList]:
    """Rerank each query's original BM25 pool under its reformulated tokens."""
    lists = ordered_map(
        lambda ctx: rerank(reformulated[ctx.query_id], ctx.pool, ranker, documents),
        contexts,
        threads,
    )
    return {ranked.query_id: ranked for ranked in lists}


def evaluate_pipeline(
    contexts: Sequence[QueryContext],
    method: Method,
    collection: Collection,
    ranker: Ranker,
    settings: Settings | None = None,
    reformulator: QueryReformulator | None = None,
) -> tuple[dict[str, RankedList], MetricReport]:
    settings = settings or get_settings()
    reformulated = reformulate_queries(contexts, method, collection, settings, reformulator)
    runs = pipeline_rankings(contexts, reformulated, ranker, collection.documents, settings.THREADS)
    return runs, evaluate(runs, collection.judgments, settings.REL_THRESHOLD)
