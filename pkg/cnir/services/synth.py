"""Synthetic collection with a planted vocabulary mismatch.

Planted queries read ``s t1 t2``. Their one relevant document reads
``c c t2`` plus fillers, where ``c`` is the canonical partner of the
synonym ``s`` and occurs nowhere else. Three distractor documents carry
``t1`` and four background documents carry ``t2``, so raw BM25 puts the
relevant document somewhere between rank 4 and 8. The knowledge graph
links entity(s) to entity(c) with a ``same`` edge, so ``c`` shows up as a
knowledge candidate term and appending it moves the relevant document to
rank 1.

Control queries ``t1 t2`` have a relevant document containing both words
and are already ranked perfectly by BM25.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cnir.core.exceptions import CnirError, InvariantError
from cnir.core.rng import stream
from cnir.schemas.corpus import Document, JudgmentSet, Query
from cnir.schemas.knowledge import Edge, Relation
from cnir.schemas.report import SynthSummary
from cnir.services import dataset
from cnir.services.corpus_io import write_corpus, write_qrels, write_queries
from cnir.services.lexical import write_embeddings
from cnir.services.metrics import average_precision
from cnir.services.ranker_knrm import rerank
from cnir.services.retrieval import Bm25Ranker, bm25_score, build_index, retrieve_topk

logger = logging.getLogger(__name__)

DOC_LENGTH = 6
DISTRACTOR_ROUNDS = 3
BACKGROUND_ROUNDS = 4
CONTROL_ROUNDS = 2
GROUP = 3
CONTEXT_WORDS = 20
CONTEXT_PER_SYNONYM = 2
FILLER_ENTITIES = 30
MIN_FILLERS = 10
DIMENSION = 50
POOL_SIZE = 10
RELEVANT_GRADE = 2
PLANTED_SHARE = 0.6
RAW_MAP_CEILING = 0.6

SYNTH_CONF = """\
# Desk-scale schedule for the synthetic collection
lr_reformulator = 0.05
batch_size = 25
train_ranker_fre = 5
max_epochs = 30
pretrain_epochs = 15
"""


@dataclass
class _Planted:
    synonym: str
    canonical: str
    t1: str
    t2: str


@dataclass
class _Control:
    t1: str
    t2: str


@dataclass
class _Draft:
    """Documents before ids are assigned; the relevant slot per query."""

    docs: list[list[str]] = field(default_factory=list)
    relevant: dict[int, int] = field(default_factory=dict)


def split_sizes(n_queries: int) -> dict[str, int]:
    """valid = test = round(3n/16), train gets the rest (100/30/30 for 160)."""
    held_out = round(n_queries * 3 / 16)
    return {"train": n_queries - 2 * held_out, "valid": held_out, "test": held_out}


def _groups(rng: np.random.Generator, items: list[str]) -> list[list[str]]:
    order = rng.permutation(len(items))
    return [[items[i] for i in order[start:start + GROUP]] for start in range(0, len(items), GROUP)]


def _unit(vec: np.ndarray) -> np.ndarray:
    return vec / np.linalg.norm(vec)


def _check_sizes(n_queries: int, n_docs: int, vocab_size: int, synonym_pairs: int) -> int:
    if synonym_pairs < 0 or n_queries < 1 or synonym_pairs > n_queries:
        raise CnirError(f"need 0 <= synonym_pairs <= n_queries, got {synonym_pairs} and {n_queries}")
    if min(split_sizes(n_queries).values()) < 1:
        raise CnirError(f"n_queries={n_queries} is too small for train/valid/test splits")
    controls = n_queries - synonym_pairs
    reserved = 4 * synonym_pairs + 2 * controls + CONTEXT_WORDS
    if vocab_size < reserved + MIN_FILLERS:
        raise CnirError(f"vocab_size={vocab_size} too small; need at least {reserved + MIN_FILLERS}")
    planted_groups = math.ceil(synonym_pairs / GROUP)
    control_groups = math.ceil(controls / GROUP)
    needed = (
        synonym_pairs + (DISTRACTOR_ROUNDS + BACKGROUND_ROUNDS) * planted_groups
        + controls + 2 * CONTROL_ROUNDS * control_groups
    )
    if n_docs < needed:
        raise CnirError(f"n_docs={n_docs} too small; the planted structure needs {needed}")
    return controls


def generate(
    out_dir: str | Path,
    seed: int = 1,
    n_queries: int = 160,
    n_docs: int = 500,
    vocab_size: int = 2000,
    synonym_pairs: int = 120,
) -> SynthSummary:
    """Write a complete data directory and verify the planted property."""
    controls = _check_sizes(n_queries, n_docs, vocab_size, synonym_pairs)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    width = len(str(vocab_size - 1))
    names = [f"w{i:0{width}d}" for i in stream(seed, "synth", "vocab").permutation(vocab_size)]
    cursor = iter(names)
    planted = [_Planted(*(next(cursor) for _ in range(4))) for _ in range(synonym_pairs)]
    control = [_Control(next(cursor), next(cursor)) for _ in range(controls)]
    context_words = [next(cursor) for _ in range(CONTEXT_WORDS)]
    fillers = list(cursor)

    # queries: planted first, then controls, shuffled before ids are given
    specs: list[_Planted | _Control] = [*planted, *control]
    order = stream(seed, "synth", "query-order").permutation(len(specs))
    specs = [specs[i] for i in order]

    draft = _draft_documents(seed, specs, fillers, n_docs)
    doc_order = stream(seed, "synth", "doc-order").permutation(len(draft.docs))
    doc_width = len(str(len(draft.docs)))
    slot_to_id = {int(slot): f"d{pos:0{doc_width}d}" for pos, slot in enumerate(doc_order)}
    documents = [Document(doc_id=slot_to_id[int(slot)], tokens=tuple(draft.docs[slot])) for slot in doc_order]
    documents.sort(key=lambda d: d.doc_id)

    q_width = len(str(n_queries))
    queries = []
    for i, spec in enumerate(specs):
        tokens = (spec.synonym, spec.t1, spec.t2) if isinstance(spec, _Planted) else (spec.t1, spec.t2)
        queries.append(Query(query_id=f"q{i:0{q_width}d}", tokens=tokens))

    index = build_index(documents)
    by_id = {d.doc_id: d for d in documents}
    grades: dict[str, dict[str, int]] = {}
    pools = {}
    for i, query in enumerate(queries):
        relevant_id = slot_to_id[draft.relevant[i]]
        pool = retrieve_topk(index, query.tokens, POOL_SIZE, query_id=query.query_id)
        pools[query.query_id] = pool
        judged = {doc_id: 0 for doc_id in pool.doc_ids}
        judged[relevant_id] = RELEVANT_GRADE
        grades[query.query_id] = judged
    judgments = JudgmentSet(grades=grades, max_grade=RELEVANT_GRADE)

    raw_map, oracle_map = _self_check(queries, specs, pools, by_id, index, judgments, slot_to_id, draft)

    entity_names, edges, dictionary, entity_vectors = _knowledge(seed, planted, context_words, fillers)
    word_vectors = _word_vectors(seed, names, planted, context_words)

    sizes = split_sizes(n_queries)
    start = 0
    for split in dataset.SPLITS:
        write_queries(queries[start:start + sizes[split]], out_dir / dataset.queries_file(split))
        start += sizes[split]
    write_corpus(documents, out_dir / dataset.CORPUS_FILE)
    write_qrels(judgments, out_dir / dataset.QRELS_FILE)
    (out_dir / dataset.ENTITY_NAMES_FILE).write_text(
        "".join(f"{eid}\t{name}\n" for eid, name in entity_names.items()), encoding="utf-8"
    )
    (out_dir / dataset.KG_EDGES_FILE).write_text(
        "".join(f"{e.head}\t{e.relation.value}\t{e.tail}\n" for e in edges), encoding="utf-8"
    )
    (out_dir / dataset.ENTITY_DICT_FILE).write_text(
        "".join(f"{surface}\t{eid}\t{c:.2f}\n" for surface, eid, c in dictionary), encoding="utf-8"
    )
    vocab_tokens = sorted(word_vectors)
    write_embeddings(out_dir / dataset.WORD_VECTORS_FILE, vocab_tokens, np.array([word_vectors[t] for t in vocab_tokens]))
    entity_ids = sorted(entity_vectors)
    write_embeddings(out_dir / dataset.ENTITY_VECTORS_FILE, entity_ids, np.array([entity_vectors[e] for e in entity_ids]))
    (out_dir / "synth.conf").write_text(SYNTH_CONF, encoding="utf-8")

    summary = SynthSummary(
        out_dir=str(out_dir),
        seed=seed,
        documents=len(documents),
        queries=sizes,
        planted=synonym_pairs,
        controls=controls,
        entities=len(entity_names),
        edges=len(edges),
        raw_map=raw_map,
        oracle_map=oracle_map,
    )
    logger.info(
        "Synthetic collection in %s: %d docs, %d queries (%d planted), raw MAP %.4f, oracle MAP %.4f",
        out_dir, len(documents), n_queries, synonym_pairs, raw_map, oracle_map,
    )
    return summary


def _padded(rng: np.random.Generator, tokens: list[str], fillers: list[str]) -> list[str]:
    pad = DOC_LENGTH - len(tokens)
    return tokens + [fillers[i] for i in rng.choice(len(fillers), size=pad, replace=False)]


def _draft_documents(
    seed: int,
    specs: list[_Planted | _Control],
    fillers: list[str],
    n_docs: int,
) -> _Draft:
    rng = stream(seed, "synth", "documents")
    draft = _Draft()
    planted_t1, planted_t2, control_t1, control_t2 = [], [], [], []
    for i, spec in enumerate(specs):
        draft.relevant[i] = len(draft.docs)
        if isinstance(spec, _Planted):
            draft.docs.append(_padded(rng, [spec.canonical, spec.canonical, spec.t2], fillers))
            planted_t1.append(spec.t1)
            planted_t2.append(spec.t2)
        else:
            draft.docs.append(_padded(rng, [spec.t1, spec.t2], fillers))
            control_t1.append(spec.t1)
            control_t2.append(spec.t2)

    for words, rounds in (
        (planted_t1, DISTRACTOR_ROUNDS),
        (planted_t2, BACKGROUND_ROUNDS),
        (control_t1, CONTROL_ROUNDS),
        (control_t2, CONTROL_ROUNDS),
    ):
        for _ in range(rounds):
            for group in _groups(rng, words):
                draft.docs.append(_padded(rng, group, fillers))

    while len(draft.docs) < n_docs:
        draft.docs.append(_padded(rng, [], fillers))
    return draft


def _self_check(queries, specs, pools, documents, index, judgments, slot_to_id, draft) -> tuple[float, float]:
    """Oracle expansion must reach MAP 1; raw BM25 must stay low when most queries are planted."""
    ranker = Bm25Ranker(index)
    raw, oracle = [], []
    for i, (query, spec) in enumerate(zip(queries, specs)):
        pool = pools[query.query_id]
        relevant_id = slot_to_id[draft.relevant[i]]
        if relevant_id not in pool.doc_ids:
            raise InvariantError(f"relevant document of {query.query_id} fell out of the BM25 pool")
        raw.append(average_precision(pool, judgments))
        expanded = query.tokens
        if isinstance(spec, _Planted):
            expanded = query.tokens + (spec.canonical,)
            if bm25_score(index, expanded, relevant_id) <= bm25_score(index, query.tokens, relevant_id):
                raise InvariantError(f"canonical term does not lift the relevant document of {query.query_id}")
        oracle.append(average_precision(rerank(expanded, pool, ranker, documents), judgments))
    raw_map = float(np.mean(raw))
    oracle_map = float(np.mean(oracle))
    if oracle_map != 1.0:
        raise InvariantError(f"oracle expansion MAP is {oracle_map:.6f}, expected 1.0")
    planted = sum(1 for spec in specs if isinstance(spec, _Planted))
    if planted >= PLANTED_SHARE * len(specs) and raw_map >= RAW_MAP_CEILING:
        raise InvariantError(f"raw BM25 MAP {raw_map:.4f} is not below {RAW_MAP_CEILING}")
    return raw_map, oracle_map


def _knowledge(
    seed: int,
    planted: list[_Planted],
    context_words: list[str],
    fillers: list[str],
) -> tuple[dict[str, str], list[Edge], list[tuple[str, str, float]], dict[str, np.ndarray]]:
    """Entities, edges, dictionary rows and entity vectors."""
    rng = stream(seed, "synth", "knowledge")
    names: dict[str, str] = {}
    vectors: dict[str, np.ndarray] = {}
    edges: list[Edge] = []
    dictionary: list[tuple[str, str, float]] = []

    def new_entity(surface: str, vector: np.ndarray) -> str:
        eid = f"E{len(names):05d}"
        names[eid] = surface
        vectors[eid] = vector
        return eid

    context_ids = [new_entity(word, _unit(rng.standard_normal(DIMENSION))) for word in context_words]
    for pair in planted:
        canonical_vec = _unit(rng.standard_normal(DIMENSION))
        canonical = new_entity(pair.canonical, canonical_vec)
        synonym = new_entity(pair.synonym, _unit(canonical_vec + 0.3 * _unit(rng.standard_normal(DIMENSION))))
        edges.append(Edge(head=synonym, relation=Relation.SAME, tail=canonical))
        for j in rng.choice(len(context_ids), size=CONTEXT_PER_SYNONYM, replace=False):
            edges.append(Edge(head=synonym, relation=Relation.RELATED, tail=context_ids[int(j)]))
        dictionary.append((pair.synonym, synonym, 0.9))
        dictionary.append((pair.canonical, canonical, 0.95))

    filler_words = [fillers[int(i)] for i in rng.choice(len(fillers), size=min(FILLER_ENTITIES, len(fillers)), replace=False)]
    filler_ids = [new_entity(word, _unit(rng.standard_normal(DIMENSION))) for word in filler_words]
    relations = (Relation.SUBCLASS, Relation.INSTANCEOF, Relation.RELATED)
    for j in range(1, len(filler_ids)):
        parent = filler_ids[int(rng.integers(0, j))]
        edges.append(Edge(head=filler_ids[j], relation=relations[j % len(relations)], tail=parent))
    for word, eid in zip(filler_words, filler_ids):
        dictionary.append((word, eid, 0.8))
    return names, edges, dictionary, vectors


def _word_vectors(
    seed: int,
    names: list[str],
    planted: list[_Planted],
    context_words: list[str],
) -> dict[str, np.ndarray]:
    """Unit Gaussian vectors; canonical words share one direction, context words another."""
    rng = stream(seed, "synth", "word-vectors")
    canonical_dir = _unit(rng.standard_normal(DIMENSION))
    context_dir = _unit(rng.standard_normal(DIMENSION))
    canonical = {p.canonical for p in planted}
    context = set(context_words)
    vectors = {}
    for token in sorted(names):
        vec = _unit(rng.standard_normal(DIMENSION))
        if token in canonical:
            vec = _unit(0.7 * canonical_dir + 0.7 * vec)
        elif token in context:
            vec = _unit(0.7 * context_dir + 0.7 * vec)
        vectors[token] = vec
    return vectors
