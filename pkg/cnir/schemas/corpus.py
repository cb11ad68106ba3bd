"""Corpus, query, judgment and run-list schemas."""
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Document(BaseModel):
    """A corpus document; tokens come from the title only."""

    model_config = ConfigDict(frozen=True)

    doc_id: str = Field(..., min_length=1)
    tokens: tuple[str, ...] = ()


class Query(BaseModel):
    """A query with optional linked entities (filled by the entity linker)."""

    model_config = ConfigDict(frozen=True)

    query_id: str = Field(..., min_length=1)
    tokens: tuple[str, ...]
    linked_entities: tuple[str, ...] = ()

    @field_validator("tokens")
    @classmethod
    def tokens_present(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        """Queries must keep at least one token."""
        if not v:
            raise ValueError("empty query tokens")
        return v

    @field_validator("linked_entities")
    @classmethod
    def entities_unique(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        if len(set(v)) != len(v):
            raise ValueError("linked_entities contains duplicates")
        return v


class RankedList(BaseModel):
    """Ordered (doc_id, score) entries for one query."""

    model_config = ConfigDict(frozen=True)

    query_id: str
    entries: tuple[tuple[str, float], ...] = ()

    @model_validator(mode="after")
    def check_order(self) -> "RankedList":
        """Scores descending, doc ids unique."""
        problem = ranked_list_problem(self)
        if problem:
            raise ValueError(problem)
        return self

    @property
    def doc_ids(self) -> list[str]:
        return [doc_id for doc_id, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def ranked_list_problem(ranked: RankedList) -> str | None:
    """Describe the first RankedList invariant violation, or None."""
    seen = set()
    previous = None
    for rank, (doc_id, score) in enumerate(ranked.entries, start=1):
        if doc_id in seen:
            return f"duplicate doc_id {doc_id} in list for {ranked.query_id}"
        seen.add(doc_id)
        if previous is not None and score > previous:
            return f"scores not descending at rank {rank} in list for {ranked.query_id}"
        previous = score
    return None


class JudgmentSet(BaseModel):
    """Graded relevance labels; unjudged pairs read as grade 0."""

    model_config = ConfigDict(frozen=True)

    grades: dict[str, dict[str, int]] = Field(default_factory=dict)
    max_grade: int = 0

    @model_validator(mode="after")
    def check_grades(self) -> "JudgmentSet":
        for query_id, docs in self.grades.items():
            for doc_id, grade in docs.items():
                if grade < 0 or grade > self.max_grade:
                    raise ValueError(
                        f"grade {grade} for ({query_id}, {doc_id}) outside [0, {self.max_grade}]"
                    )
        return self

    def grade(self, query_id: str, doc_id: str) -> int:
        return self.grades.get(query_id, {}).get(doc_id, 0)

    def judged(self, query_id: str) -> dict[str, int]:
        """All judged documents of a query."""
        return self.grades.get(query_id, {})

    def relevant_count(self, query_id: str, rel_threshold: int = 1) -> int:
        return sum(1 for g in self.judged(query_id).values() if g >= rel_threshold)

    @property
    def query_ids(self) -> list[str]:
        return sorted(self.grades)
