"""Error hierarchy shared by every cnir module."""
from pathlib import Path


class CnirError(Exception):
    """Base error carrying the process exit code used by the CLI."""

    exit_code: int = 2

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class DataFormatError(CnirError):
    """Malformed input file."""

    def __init__(
        self,
        detail: str,
        path: str | Path | None = None,
        line_no: int | None = None,
    ):
        self.path = str(path) if path is not None else None
        self.line_no = line_no
        prefix = ""
        if self.path is not None:
            prefix = f"{self.path}:{line_no}: " if line_no is not None else f"{self.path}: "
        super().__init__(prefix + detail)


class DuplicateIdError(DataFormatError):
    """An identifier occurs twice where it must be unique."""


class EmbeddingFormatError(DataFormatError):
    """Embedding file header and rows disagree."""


class InvariantError(CnirError):
    """A structural invariant was violated by the caller."""


class UnknownEntityError(CnirError):
    """Entity id not present in the knowledge graph."""

    def __init__(self, entity_id: str):
        super().__init__(f"unknown entity: {entity_id}")
        self.entity_id = entity_id


class UnknownDocumentError(CnirError):
    """Document id not present in the index."""

    def __init__(self, doc_id: str):
        super().__init__(f"unknown document: {doc_id}")
        self.doc_id = doc_id


class GradientError(CnirError):
    """Non-finite gradient in a named parameter block."""

    def __init__(self, block: str, detail: str = "non-finite gradient"):
        super().__init__(f"{detail} in parameter block '{block}'")
        self.block = block


class CheckpointError(CnirError):
    """Checkpoint could not be written or read back."""


class TrainingError(CnirError):
    """Training cannot proceed with the given data."""


class ConfigError(CnirError):
    """Unknown or invalid configuration key."""

    exit_code = 1


class UsageError(CnirError):
    """Bad command-line usage."""

    exit_code = 1
