"""Shared fixtures: tiny hand-built corpora and a small synthetic collection."""
import numpy as np
import pytest

from cnir.config import Settings
from cnir.schemas.corpus import Document, JudgmentSet, Query
from cnir.services import synth
from cnir.services.dataset import load_collection
from cnir.services.lexical import EmbeddingTable, Vocabulary

SMALL_SYNTH = dict(seed=3, n_queries=16, n_docs=60, vocab_size=300, synonym_pairs=10)


def small_settings(**overrides) -> Settings:
    """Narrow networks and short schedules for fast tests."""
    values = dict(
        SEED=3,
        FEATURE_MAPS=4,
        WINDOW_SIZES=(1, 2),
        TERM_HIDDEN=4,
        SCORE_HIDDEN=4,
        KERNELS=5,
        PRETRAIN_EPOCHS=2,
        MAX_EPOCHS=2,
        TRAIN_RANKER_FRE=1,
        BATCH_SIZE=4,
        M=3,
        LR_REFORMULATOR=0.05,
        PATIENCE=3,
    )
    values.update(overrides)
    return Settings(**values)


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    synth.generate(out, **SMALL_SYNTH)
    return out


@pytest.fixture(scope="session")
def settings(synth_dir):
    return small_settings(DATA_DIR=synth_dir)


@pytest.fixture(scope="session")
def collection(synth_dir, settings):
    return load_collection(synth_dir, settings)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_docs():
    return [
        Document(doc_id="d1", tokens=("apple", "banana", "apple")),
        Document(doc_id="d2", tokens=("banana", "cherry")),
        Document(doc_id="d3", tokens=("cherry", "date", "elder", "fig")),
        Document(doc_id="d4", tokens=("apple",)),
        Document(doc_id="d5", tokens=()),
    ]


@pytest.fixture
def toy_query():
    return Query(query_id="q1", tokens=("apple", "cherry"))


@pytest.fixture
def toy_judgments():
    return JudgmentSet(grades={"q1": {"d1": 2, "d2": 0, "d3": 1, "d4": 0}}, max_grade=2)


def random_table(tokens, dim, rng) -> EmbeddingTable:
    vocab = Vocabulary(tokens)
    matrix = rng.normal(size=(len(vocab), dim))
    matrix[Vocabulary.PAD_ID] = 0.0
    return EmbeddingTable("word", vocab, matrix)
