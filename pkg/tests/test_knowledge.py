import numpy as np
import pytest
from pydantic import ValidationError

from cnir.core.exceptions import DataFormatError, UnknownEntityError
from cnir.schemas.corpus import Document, Query
from cnir.schemas.knowledge import CandidateTermSet, Edge, Relation, RelationCategory
from cnir.services.knowledge import (
    EntityDictionary,
    KnowledgeGraph,
    build_candidates,
    link_entities,
    load_entity_dictionary,
    load_knowledge_graph,
    neighbor_entities,
)
from cnir.services.lexical import EmbeddingTable, Vocabulary


@pytest.fixture
def kg():
    names = {
        "E1": ("bert",),
        "E2": ("transformer",),
        "E3": ("language", "model"),
        "E4": ("sesame", "street"),
        "E5": ("isolated",),
    }
    edges = [
        Edge(head="E1", relation=Relation.SUBCLASS, tail="E3"),
        Edge(head="E2", relation=Relation.RELATED, tail="E1"),
        Edge(head="E4", relation=Relation.SAME, tail="E1"),
    ]
    return KnowledgeGraph(names, edges)


@pytest.fixture
def emb():
    tokens = ["bert", "transformer", "language", "model", "sesame", "street", "isolated", "pretraining", "doc"]
    vocab = Vocabulary(tokens)
    rng = np.random.default_rng(0)
    matrix = rng.normal(size=(len(vocab), 8))
    matrix[vocab.id("transformer")] = matrix[vocab.id("pretraining")] * 2.0
    return EmbeddingTable("word", vocab, matrix)


class TestRelations:
    def test_categories(self):
        assert Relation.SUBCLASS.category is RelationCategory.DERIVATION
        assert Relation.INSTANCEOF.category is RelationCategory.DERIVATION
        assert Relation.SAME.category is RelationCategory.EQUIVALENCY
        assert Relation.RELATED.category is RelationCategory.EQUIVALENCY


class TestGraph:
    def test_neighbors_are_undirected(self, kg):
        assert kg.neighbors("E3") == {"E1"}
        assert kg.neighbors("E1") == {"E2", "E3", "E4"}

    def test_unknown_entity(self, kg):
        with pytest.raises(UnknownEntityError):
            kg.neighbors("E9")

    def test_neighbor_entities_exclude_inputs(self, kg):
        assert neighbor_entities(kg, ["E1", "E2"]) == ["E3", "E4"]
        assert neighbor_entities(kg, ["E5"]) == []

    def test_edge_to_unnamed_entity(self):
        with pytest.raises(UnknownEntityError):
            KnowledgeGraph({"E1": ("a",)}, [Edge(head="E1", relation=Relation.SAME, tail="E2")])

    def test_load_files(self, tmp_path):
        (tmp_path / "names.tsv").write_text("E1\tBERT\nE2\tLanguage Model\n")
        (tmp_path / "edges.tsv").write_text("E1\tSubClass\tE2\n")
        kg = load_knowledge_graph(tmp_path / "edges.tsv", tmp_path / "names.tsv")
        assert kg.surface("E2") == ("language", "model")
        assert kg.edges[0].relation is Relation.SUBCLASS

    def test_load_unknown_relation(self, tmp_path):
        (tmp_path / "names.tsv").write_text("E1\ta\nE2\tb\n")
        (tmp_path / "edges.tsv").write_text("E1\tcousin\tE2\n")
        with pytest.raises(DataFormatError, match="cousin"):
            load_knowledge_graph(tmp_path / "edges.tsv", tmp_path / "names.tsv")


class TestLinking:
    def test_longest_match_first(self):
        dictionary = EntityDictionary({
            ("language",): [("E7", 0.5)],
            ("language", "model"): [("E3", 0.6), ("E8", 0.3)],
            ("bert",): [("E1", 0.9)],
        })
        query = Query(query_id="q", tokens=("bert", "language", "model", "bert"))
        assert link_entities(query, dictionary).linked_entities == ("E1", "E3")

    def test_no_match(self):
        query = Query(query_id="q", tokens=("nothing",))
        assert link_entities(query, EntityDictionary({})).linked_entities == ()

    def test_commonness_over_one(self):
        with pytest.raises(DataFormatError):
            EntityDictionary({("a",): [("E1", 0.7), ("E2", 0.5)]})

    def test_load_dictionary(self, tmp_path):
        (tmp_path / "dict.tsv").write_text("Language Model\tE3\t0.6\nlanguage model\tE8\t0.3\n")
        dictionary = load_entity_dictionary(tmp_path / "dict.tsv")
        assert dictionary.lookup(["language", "model"]) == [("E3", 0.6), ("E8", 0.3)]
        assert dictionary.max_span == 2


class TestCandidates:
    def test_prf_then_knowledge(self, kg, emb):
        query = Query(query_id="q", tokens=("bert", "pretraining"), linked_entities=("E1",))
        prf = [
            Document(doc_id="a", tokens=("doc", "bert", "model")),
            Document(doc_id="b", tokens=("doc", "street")),
        ]
        cands = build_candidates(query, prf, kg, emb, prf_k=3, know_top=20)
        assert cands.prf_terms == ("doc", "model", "street")
        # neighbours E2, E3, E4 give transformer, language, model, sesame, street; PRF terms removed
        assert set(cands.know_terms) == {"transformer", "language", "sesame"}
        assert cands.know_terms[0] == "transformer"
        assert cands.all_terms[:3] == cands.prf_terms

    def test_know_top_cap(self, kg, emb):
        query = Query(query_id="q", tokens=("bert",), linked_entities=("E1",))
        cands = build_candidates(query, [], kg, emb, know_top=2)
        assert len(cands.know_terms) == 2

    def test_without_knowledge(self, kg, emb):
        query = Query(query_id="q", tokens=("bert",), linked_entities=("E1",))
        cands = build_candidates(query, [], kg, emb, use_knowledge=False)
        assert len(cands) == 0

    def test_unlinked_query_has_only_prf_terms(self, kg, emb):
        query = Query(query_id="q", tokens=("bert",))
        cands = build_candidates(query, [Document(doc_id="a", tokens=("doc",))], kg, emb)
        assert cands.prf_terms == ("doc",)
        assert cands.know_terms == ()

    def test_overlap_rejected(self):
        with pytest.raises(ValidationError):
            CandidateTermSet(query_id="q", prf_terms=("a",), know_terms=("a",))
