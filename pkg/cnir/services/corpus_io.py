"""Readers and writers for corpora, queries, qrels and TREC run files."""
import json
import logging
from collections.abc import Iterable
from pathlib import Path

from pydantic import ValidationError

from cnir.core.exceptions import DataFormatError, DuplicateIdError, InvariantError
from cnir.schemas.corpus import Document, JudgmentSet, Query, RankedList, ranked_list_problem
from cnir.services.lexical import tokenize

logger = logging.getLogger(__name__)


def load_corpus(path: str | Path) -> list[Document]:
    """JSONL with ``id`` and ``title`` keys; file order is kept."""
    path = Path(path)
    documents: list[Document] = []
    seen: set[str] = set()
    empty_titles = 0
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataFormatError(f"invalid JSON: {e.msg}", path, line_no) from e
            if not isinstance(record, dict):
                raise DataFormatError("expected a JSON object", path, line_no)
            doc_id, title = record.get("id"), record.get("title")
            if not isinstance(doc_id, str) or not doc_id:
                raise DataFormatError("missing or empty 'id'", path, line_no)
            if not isinstance(title, str):
                raise DataFormatError(f"document {doc_id} has no string 'title'", path, line_no)
            if doc_id in seen:
                raise DuplicateIdError(f"duplicate doc_id '{doc_id}'", path, line_no)
            seen.add(doc_id)
            tokens = tokenize(title)
            if not tokens:
                empty_titles += 1
            documents.append(Document(doc_id=doc_id, tokens=tuple(tokens)))
    if empty_titles:
        logger.warning("%s: %d documents with empty titles", path, empty_titles)
    logger.info("Loaded %d documents from %s", len(documents), path)
    return documents


def load_queries(path: str | Path) -> list[Query]:
    """TSV ``query_id<TAB>text``; blank lines are skipped and counted."""
    path = Path(path)
    queries: list[Query] = []
    seen: set[str] = set()
    blank = 0
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                blank += 1
                continue
            if "\t" not in line:
                raise DataFormatError("expected 'query_id<TAB>text'", path, line_no)
            query_id, text = line.split("\t", 1)
            query_id = query_id.strip()
            if not query_id:
                raise DataFormatError("empty query id", path, line_no)
            if query_id in seen:
                raise DuplicateIdError(f"duplicate query_id '{query_id}'", path, line_no)
            tokens = tokenize(text)
            if not tokens:
                raise DataFormatError(f"empty query tokens for '{query_id}'", path, line_no)
            seen.add(query_id)
            queries.append(Query(query_id=query_id, tokens=tuple(tokens)))
    if blank:
        logger.warning("%s: skipped %d blank lines", path, blank)
    logger.info("Loaded %d queries from %s", len(queries), path)
    return queries


def load_qrels(path: str | Path) -> JudgmentSet:
    """TREC qrels ``query_id 0 doc_id grade``; later duplicates win."""
    path = Path(path)
    grades: dict[str, dict[str, int]] = {}
    duplicates = 0
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 4:
                raise DataFormatError(f"expected 4 fields, got {len(fields)}", path, line_no)
            query_id, _, doc_id, raw_grade = fields
            try:
                grade = int(raw_grade)
            except ValueError as e:
                raise DataFormatError(f"grade '{raw_grade}' is not an integer", path, line_no) from e
            if grade < 0:
                raise DataFormatError(f"negative grade {grade}", path, line_no)
            docs = grades.setdefault(query_id, {})
            if doc_id in docs:
                duplicates += 1
            docs[doc_id] = grade
    if duplicates:
        logger.warning("%s: %d duplicate judgments, last value kept", path, duplicates)
    max_grade = max((g for docs in grades.values() for g in docs.values()), default=0)
    return JudgmentSet(grades=grades, max_grade=max_grade)


def validate_judgments(judgments: JudgmentSet, doc_ids: Iterable[str]) -> int:
    """Warn about judged documents missing from the corpus; returns the count."""
    known = set(doc_ids)
    missing = sum(
        1 for docs in judgments.grades.values() for doc_id in docs if doc_id not in known
    )
    if missing:
        logger.warning("%d judged documents are not in the corpus", missing)
    return missing


def write_run(lists: Iterable[RankedList], path: str | Path, tag: str = "cnir") -> None:
    """TREC run ``query_id Q0 doc_id rank score tag``, scores to 6 decimals."""
    lines = []
    for ranked in lists:
        problem = ranked_list_problem(ranked)
        if problem:
            raise InvariantError(f"cannot write run: {problem}")
        for rank, (doc_id, score) in enumerate(ranked.entries, start=1):
            lines.append(f"{ranked.query_id} Q0 {doc_id} {rank} {score:.6f} {tag}")
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_run(path: str | Path) -> dict[str, RankedList]:
    """Parse a TREC run file into lists keyed by query id, ordered by rank."""
    path = Path(path)
    rows: dict[str, list[tuple[int, str, float]]] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 6:
                raise DataFormatError(f"expected 6 fields, got {len(fields)}", path, line_no)
            query_id, _, doc_id, rank, score, _ = fields
            try:
                rows.setdefault(query_id, []).append((int(rank), doc_id, float(score)))
            except ValueError as e:
                raise DataFormatError("rank or score is not numeric", path, line_no) from e
    runs = {}
    for query_id, entries in rows.items():
        entries.sort(key=lambda row: row[0])
        try:
            runs[query_id] = RankedList(
                query_id=query_id,
                entries=tuple((doc_id, score) for _, doc_id, score in entries),
            )
        except ValidationError as e:
            raise DataFormatError(f"run for '{query_id}' is inconsistent: {e}", path) from e
    return runs


def write_corpus(documents: Iterable[Document], path: str | Path) -> None:
    lines = [
        json.dumps({"id": doc.doc_id, "title": " ".join(doc.tokens)}, ensure_ascii=False)
        for doc in documents
    ]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def write_queries(queries: Iterable[Query], path: str | Path) -> None:
    lines = [f"{q.query_id}\t{' '.join(q.tokens)}" for q in queries]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def write_qrels(judgments: JudgmentSet, path: str | Path) -> None:
    lines = [
        f"{query_id} 0 {doc_id} {grade}"
        for query_id in judgments.query_ids
        for doc_id, grade in sorted(judgments.judged(query_id).items())
    ]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
