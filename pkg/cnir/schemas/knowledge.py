"""Knowledge-graph schemas."""
import enum

from pydantic import BaseModel, ConfigDict, Field, model_validator


class RelationCategory(str, enum.Enum):
    """Coarse grouping of relation types."""
    DERIVATION = "derivation"
    EQUIVALENCY = "equivalency"


class Relation(str, enum.Enum):
    """Edge relation types."""
    SUBCLASS = "subclass"
    INSTANCEOF = "instanceof"
    SAME = "same"
    RELATED = "related"

    @property
    def category(self) -> RelationCategory:
        """Stored as metadata only; scoring ignores it."""
        if self in (Relation.SUBCLASS, Relation.INSTANCEOF):
            return RelationCategory.DERIVATION
        return RelationCategory.EQUIVALENCY


class Edge(BaseModel):
    """One (head, relation, tail) triple."""

    model_config = ConfigDict(frozen=True)

    head: str
    relation: Relation
    tail: str


class CandidateTermSet(BaseModel):
    """Expansion candidates for one query: PRF terms first, then knowledge terms."""

    model_config = ConfigDict(frozen=True)

    query_id: str
    prf_terms: tuple[str, ...] = ()
    know_terms: tuple[str, ...] = ()
    know_top: int = Field(20, ge=0)

    @model_validator(mode="after")
    def check_disjoint(self) -> "CandidateTermSet":
        if len(set(self.prf_terms)) != len(self.prf_terms):
            raise ValueError("duplicate PRF terms")
        if len(set(self.know_terms)) != len(self.know_terms):
            raise ValueError("duplicate knowledge terms")
        if set(self.prf_terms) & set(self.know_terms):
            raise ValueError("knowledge terms overlap PRF terms")
        if len(self.know_terms) > self.know_top:
            raise ValueError(f"more than {self.know_top} knowledge terms")
        return self

    @property
    def all_terms(self) -> tuple[str, ...]:
        return self.prf_terms + self.know_terms

    def __len__(self) -> int:
        return len(self.prf_terms) + len(self.know_terms)
