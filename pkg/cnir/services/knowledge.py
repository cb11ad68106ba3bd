"""Knowledge graph, commonness entity linking and candidate-term construction."""
import logging
from collections.abc import Iterable, Sequence
from pathlib import Path

from cnir.core.exceptions import DataFormatError, UnknownEntityError
from cnir.schemas.corpus import Document, Query
from cnir.schemas.knowledge import CandidateTermSet, Edge, Relation
from cnir.services.lexical import EmbeddingTable, cosine, tokenize

logger = logging.getLogger(__name__)

COMMONNESS_SLACK = 1e-6


class KnowledgeGraph:
    """Entities with surface names and typed edges, read as undirected."""

    def __init__(
        self,
        names: dict[str, tuple[str, ...]],
        edges: Sequence[Edge] = (),
        entity_embeddings: EmbeddingTable | None = None,
    ):
        self.names = names
        self.edges = list(edges)
        self.entity_embeddings = entity_embeddings
        self._adjacent: dict[str, set[str]] = {eid: set() for eid in names}
        for edge in self.edges:
            for endpoint in (edge.head, edge.tail):
                if endpoint not in names:
                    raise UnknownEntityError(endpoint)
            self._adjacent[edge.head].add(edge.tail)
            self._adjacent[edge.tail].add(edge.head)

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self.names

    def __len__(self) -> int:
        return len(self.names)

    @property
    def entity_ids(self) -> list[str]:
        return sorted(self.names)

    def neighbors(self, entity_id: str) -> set[str]:
        if entity_id not in self.names:
            raise UnknownEntityError(entity_id)
        return self._adjacent[entity_id]

    def surface(self, entity_id: str) -> tuple[str, ...]:
        return self.names[entity_id]


class EntityDictionary:
    """Surface form (token tuple) -> [(entity_id, commonness)] by commonness desc."""

    def __init__(self, entries: dict[tuple[str, ...], list[tuple[str, float]]]):
        self.entries: dict[tuple[str, ...], list[tuple[str, float]]] = {}
        for surface, candidates in entries.items():
            total = sum(c for _, c in candidates)
            if total > 1.0 + COMMONNESS_SLACK:
                raise DataFormatError(
                    f"commonness for '{' '.join(surface)}' sums to {total:.6f} > 1"
                )
            self.entries[surface] = sorted(candidates, key=lambda ec: (-ec[1], ec[0]))
        self.max_span = max((len(s) for s in self.entries), default=0)

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, surface: Sequence[str]) -> list[tuple[str, float]]:
        return self.entries.get(tuple(surface), [])


def load_knowledge_graph(edges_path: str | Path, names_path: str | Path) -> KnowledgeGraph:
    """Entity names TSV ``entity_id<TAB>surface`` and edges TSV ``head<TAB>relation<TAB>tail``."""
    names: dict[str, tuple[str, ...]] = {}
    with open(names_path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataFormatError("expected 'entity_id<TAB>surface'", names_path, line_no)
            entity_id, surface = parts[0].strip(), tokenize(parts[1])
            if entity_id in names:
                raise DataFormatError(f"duplicate entity '{entity_id}'", names_path, line_no)
            names[entity_id] = tuple(surface)

    edges: list[Edge] = []
    with open(edges_path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = [p.strip() for p in line.split("\t")]
            if len(parts) != 3:
                raise DataFormatError("expected 'head<TAB>relation<TAB>tail'", edges_path, line_no)
            head, relation, tail = parts
            try:
                rel = Relation(relation.lower())
            except ValueError as e:
                raise DataFormatError(f"unknown relation '{relation}'", edges_path, line_no) from e
            for endpoint in (head, tail):
                if endpoint not in names:
                    raise DataFormatError(f"edge endpoint '{endpoint}' has no name", edges_path, line_no)
            edges.append(Edge(head=head, relation=rel, tail=tail))

    logger.info("Loaded knowledge graph: %d entities, %d edges", len(names), len(edges))
    return KnowledgeGraph(names, edges)


def load_entity_dictionary(path: str | Path) -> EntityDictionary:
    """TSV ``surface<TAB>entity_id<TAB>commonness``."""
    entries: dict[tuple[str, ...], list[tuple[str, float]]] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataFormatError("expected 'surface<TAB>entity_id<TAB>commonness'", path, line_no)
            surface = tuple(tokenize(parts[0]))
            try:
                commonness = float(parts[2])
            except ValueError as e:
                raise DataFormatError(f"commonness '{parts[2]}' is not a number", path, line_no) from e
            if not 0.0 <= commonness <= 1.0:
                raise DataFormatError(f"commonness {commonness} outside [0, 1]", path, line_no)
            if surface:
                entries.setdefault(surface, []).append((parts[1].strip(), commonness))
    try:
        return EntityDictionary(entries)
    except DataFormatError as e:
        raise DataFormatError(e.detail, path) from e


def link_entities(query: Query, dictionary: EntityDictionary) -> Query:
    """Greedy left-to-right longest match; each span takes its most common entity."""
    tokens = query.tokens
    linked: list[str] = []
    i = 0
    while i < len(tokens):
        for span in range(min(dictionary.max_span, len(tokens) - i), 0, -1):
            candidates = dictionary.lookup(tokens[i:i + span])
            if candidates:
                entity_id = candidates[0][0]
                if entity_id not in linked:
                    linked.append(entity_id)
                i += span
                break
        else:
            i += 1
    return query.model_copy(update={"linked_entities": tuple(linked)})


def neighbor_entities(kg: KnowledgeGraph, entity_ids: Iterable[str]) -> list[str]:
    """1-hop neighbors over all relations, minus the inputs, sorted by id."""
    entity_ids = list(entity_ids)
    found: set[str] = set()
    for entity_id in entity_ids:
        found |= kg.neighbors(entity_id)
    return sorted(found - set(entity_ids))


def build_candidates(
    query: Query,
    prf_docs: Sequence[Document],
    kg: KnowledgeGraph,
    word_emb: EmbeddingTable,
    prf_k: int = 3,
    know_top: int = 20,
    use_knowledge: bool = True,
) -> CandidateTermSet:
    """C_q = PRF terms followed by knowledge terms.

    PRF terms keep first-occurrence order over the top documents. Knowledge
    terms are the surface tokens of neighbor entities, filtered against PRF
    and query tokens, ranked by max cosine to any query token (ties
    lexicographic) and cut at ``know_top``.
    """
    query_tokens = set(query.tokens)
    prf_terms: list[str] = []
    seen = set(query_tokens)
    for doc in prf_docs[:prf_k]:
        for tok in doc.tokens:
            if tok not in seen:
                seen.add(tok)
                prf_terms.append(tok)

    know_terms: list[str] = []
    if use_knowledge and query.linked_entities:
        linked = [e for e in query.linked_entities if e in kg]
        pool: list[str] = []
        for entity_id in neighbor_entities(kg, linked):
            for tok in kg.surface(entity_id):
                if tok not in seen:
                    seen.add(tok)
                    pool.append(tok)
        query_vectors = [word_emb.vector(tok) for tok in query.tokens]
        scored = [
            (max(cosine(word_emb.vector(term), qv) for qv in query_vectors), term)
            for term in pool
        ]
        scored.sort(key=lambda st: (-st[0], st[1]))
        know_terms = [term for _, term in scored[:know_top]]

    return CandidateTermSet(
        query_id=query.query_id,
        prf_terms=tuple(prf_terms),
        know_terms=tuple(know_terms),
        know_top=know_top,
    )
