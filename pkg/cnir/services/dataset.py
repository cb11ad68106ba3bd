"""Loading a data directory and precomputing per-split pools and candidate sets."""
import logging
from dataclasses import dataclass, field
from pathlib import Path

from cnir.config import Settings, get_settings
from cnir.core.exceptions import ConfigError, DataFormatError
from cnir.core.rng import stream
from cnir.schemas.corpus import Document, JudgmentSet, Query, RankedList
from cnir.schemas.knowledge import CandidateTermSet
from cnir.services.corpus_io import load_corpus, load_qrels, load_queries, validate_judgments
from cnir.services.knowledge import (
    EntityDictionary,
    KnowledgeGraph,
    build_candidates,
    link_entities,
    load_entity_dictionary,
    load_knowledge_graph,
)
from cnir.services.lexical import EmbeddingTable, Vocabulary, load_embeddings
from cnir.services.retrieval import InvertedIndex, build_index, load_index, retrieve_topk

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")

CORPUS_FILE = "corpus.jsonl"
QRELS_FILE = "qrels.txt"
KG_EDGES_FILE = "kg_edges.tsv"
ENTITY_NAMES_FILE = "entity_names.tsv"
ENTITY_DICT_FILE = "entity_dict.tsv"
WORD_VECTORS_FILE = "word_vectors.txt"
ENTITY_VECTORS_FILE = "entity_vectors.txt"
INDEX_FILE = "index.json"


def queries_file(split: str) -> str:
    return f"queries_{split}.tsv"


@dataclass
class Collection:
    """Everything loaded from one data directory."""

    documents: dict[str, Document]
    index: InvertedIndex
    queries: dict[str, list[Query]]
    judgments: JudgmentSet
    kg: KnowledgeGraph
    entity_dict: EntityDictionary
    vocab: Vocabulary
    word_emb: EmbeddingTable

    def split(self, name: str) -> list[Query]:
        if name not in self.queries:
            raise DataFormatError(f"unknown query split '{name}'")
        return self.queries[name]


@dataclass
class QueryContext:
    """A query with its BM25 pool, feedback list and candidate terms."""

    query: Query
    pool: RankedList
    prf_list: RankedList
    candidates: CandidateTermSet
    prf_docs: list[Document] = field(default_factory=list)

    @property
    def query_id(self) -> str:
        return self.query.query_id


def _require(path: Path) -> Path:
    if not path.is_file():
        raise DataFormatError(f"missing data file {path.name}", path)
    return path


def load_collection(
    data_dir: str | Path | None = None,
    settings: Settings | None = None,
    index_path: str | Path | None = None,
) -> Collection:
    """Read a data directory; queries are entity-linked unless candidate_source is prf.

    The word vocabulary covers corpus, query and entity-name tokens. Rows
    missing from the vector files are drawn from the seed so a directory
    always loads the same way.
    """
    settings = settings or get_settings()
    data_dir = Path(data_dir or settings.DATA_DIR)
    if not data_dir.is_dir():
        raise DataFormatError(f"data directory {data_dir} does not exist")

    documents = load_corpus(_require(data_dir / CORPUS_FILE))
    raw_queries = {split: load_queries(_require(data_dir / queries_file(split))) for split in SPLITS}
    judgments = load_qrels(_require(data_dir / QRELS_FILE))
    validate_judgments(judgments, (d.doc_id for d in documents))
    kg = load_knowledge_graph(_require(data_dir / KG_EDGES_FILE), _require(data_dir / ENTITY_NAMES_FILE))
    entity_dict = load_entity_dictionary(_require(data_dir / ENTITY_DICT_FILE))

    if index_path is None and (data_dir / INDEX_FILE).is_file():
        index_path = data_dir / INDEX_FILE
    if index_path is not None:
        index = load_index(index_path)
        if set(index.doc_lengths) != {d.doc_id for d in documents}:
            raise DataFormatError("saved index does not match the corpus", index_path)
        logger.info("Reusing index %s", index_path)
    else:
        index = build_index(documents)

    vocab = Vocabulary.build(
        [d.tokens for d in documents]
        + [q.tokens for qs in raw_queries.values() for q in qs]
        + [kg.surface(e) for e in kg.entity_ids]
    )
    word_emb = load_embeddings(
        _require(data_dir / WORD_VECTORS_FILE), vocab, stream(settings.SEED, "embeddings", "word"), "word"
    )
    entity_emb = load_embeddings(
        _require(data_dir / ENTITY_VECTORS_FILE),
        Vocabulary(kg.entity_ids),
        stream(settings.SEED, "embeddings", "entity"),
        "entity",
    )
    for table in (word_emb, entity_emb):
        if table.dimension != settings.EMBEDDING_DIM:
            raise ConfigError(
                f"embedding_dim is {settings.EMBEDDING_DIM} but {table.kind} vectors have {table.dimension}"
            )
    kg.entity_embeddings = entity_emb

    if settings.CANDIDATE_SOURCE == "knowledge":
        queries = {s: [link_entities(q, entity_dict) for q in qs] for s, qs in raw_queries.items()}
    else:
        queries = raw_queries
    linked = sum(1 for qs in queries.values() for q in qs if q.linked_entities)
    logger.info(
        "Collection %s: %d documents, %s queries, %d with linked entities",
        data_dir, len(documents), "/".join(str(len(queries[s])) for s in SPLITS), linked,
    )
    return Collection(
        documents={d.doc_id: d for d in documents},
        index=index,
        queries=queries,
        judgments=judgments,
        kg=kg,
        entity_dict=entity_dict,
        vocab=vocab,
        word_emb=word_emb,
    )


def prepare_query(query: Query, collection: Collection, settings: Settings) -> QueryContext:
    pool = retrieve_topk(
        collection.index, query.tokens, settings.POOL_SIZE,
        settings.BM25_K1, settings.BM25_B, query_id=query.query_id,
    )
    prf_list = RankedList(query_id=query.query_id, entries=pool.entries[:settings.PRF_K])
    prf_docs = [collection.documents[d] for d in prf_list.doc_ids]
    candidates = build_candidates(
        query,
        prf_docs,
        collection.kg,
        collection.word_emb,
        prf_k=settings.PRF_K,
        know_top=settings.KNOW_TOP,
        use_knowledge=settings.CANDIDATE_SOURCE == "knowledge",
    )
    return QueryContext(query, pool, prf_list, candidates, prf_docs)


def prepare_split(collection: Collection, split: str, settings: Settings | None = None) -> list[QueryContext]:
    """BM25 pool, PRF list and candidate set for every query of a split."""
    settings = settings or get_settings()
    contexts = [prepare_query(q, collection, settings) for q in collection.split(split)]
    empty_pools = sum(1 for c in contexts if not len(c.pool))
    no_candidates = sum(1 for c in contexts if not len(c.candidates))
    if empty_pools:
        logger.warning("%s: %d queries retrieve no documents", split, empty_pools)
    if no_candidates:
        logger.warning("%s: %d queries have no candidate terms", split, no_candidates)
    return contexts
