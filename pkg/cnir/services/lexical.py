"""Tokenizer, vocabulary, embedding tables and cosine similarity."""
import logging
import re
from collections.abc import Iterable
from pathlib import Path

import numpy as np

from cnir.core.exceptions import DataFormatError, EmbeddingFormatError, InvariantError

logger = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_PUNCT_ONLY = re.compile(r"^[\W_]+$")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, drop punctuation-only tokens."""
    return [tok for tok in text.lower().split() if not _PUNCT_ONLY.match(tok)]


class Vocabulary:
    """Token <-> id bijection with fixed PAD (0) and UNK (1) ids."""

    PAD_ID = 0
    UNK_ID = 1

    def __init__(self, tokens: Iterable[str] = ()):
        known = sorted(set(tokens) - {PAD_TOKEN, UNK_TOKEN})
        self._itos = [PAD_TOKEN, UNK_TOKEN] + known
        self._stoi = {tok: i for i, tok in enumerate(self._itos)}

    @classmethod
    def build(cls, token_lists: Iterable[Iterable[str]]) -> "Vocabulary":
        """Vocabulary over every token of every list."""
        tokens: set[str] = set()
        for toks in token_lists:
            tokens.update(toks)
        return cls(tokens)

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    @property
    def tokens(self) -> list[str]:
        return list(self._itos)

    def id(self, token: str) -> int:
        return self._stoi.get(token, self.UNK_ID)

    def ids(self, tokens: Iterable[str]) -> np.ndarray:
        return np.array([self.id(tok) for tok in tokens], dtype=np.int64)

    def save(self, path: str | Path) -> None:
        """One token per line; the line number is the id."""
        Path(path).write_text("\n".join(self._itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if lines[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise DataFormatError("vocabulary must start with <pad> and <unk>", path)
        vocab = cls(lines[2:])
        if vocab.tokens != lines:
            raise DataFormatError("vocabulary lines are not sorted and unique", path)
        return vocab


class EmbeddingTable:
    """One row per vocabulary id; the PAD row is all zeros."""

    def __init__(self, kind: str, vocab: Vocabulary, matrix: np.ndarray):
        if kind not in ("word", "entity"):
            raise InvariantError(f"embedding kind must be word or entity, got {kind}")
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(vocab) or matrix.shape[1] < 1:
            raise InvariantError(
                f"embedding matrix shape {matrix.shape} does not fit vocabulary of {len(vocab)}"
            )
        self.kind = kind
        self.vocab = vocab
        self.matrix = matrix

    @property
    def dimension(self) -> int:
        return self.matrix.shape[1]

    def vector(self, token: str) -> np.ndarray:
        return self.matrix[self.vocab.id(token)]

    def lookup(self, tokens: Iterable[str]) -> np.ndarray:
        """Rows for tokens, shape (n, dimension)."""
        return self.matrix[self.vocab.ids(tokens)].reshape(-1, self.dimension)

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.kind, self.vocab, self.matrix.copy())


def load_embeddings(
    path: str | Path,
    vocab: Vocabulary,
    rng: np.random.Generator,
    kind: str = "word",
) -> EmbeddingTable:
    """Read ``count dim`` then ``token v1 .. vD`` lines.

    Vocabulary tokens missing from the file keep a row drawn uniformly from
    [-0.1, 0.1]; the draw covers the whole table in id order so it only
    depends on the seed and vocabulary size. File tokens outside the
    vocabulary are ignored.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2:
            raise EmbeddingFormatError("header must be 'count dimension'", path, 1)
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError as e:
            raise EmbeddingFormatError("header must be two integers", path, 1) from e
        if dim <= 0:
            raise EmbeddingFormatError(f"dimension must be positive, got {dim}", path, 1)

        matrix = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
        found = 0
        rows = 0
        for line_no, line in enumerate(f, start=2):
            parts = line.split()
            if not parts:
                continue
            rows += 1
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise EmbeddingFormatError(
                    f"token '{token}' has {len(values)} values, header says {dim}", path, line_no
                )
            if token in vocab:
                try:
                    matrix[vocab.id(token)] = [float(v) for v in values]
                except ValueError as e:
                    raise EmbeddingFormatError(f"bad number in row for '{token}'", path, line_no) from e
                found += 1

    if rows != count:
        logger.warning("%s: header announces %d rows, found %d", path, count, rows)
    matrix[Vocabulary.PAD_ID] = 0.0
    logger.info(
        "Loaded %s embeddings %s: %d/%d vocabulary rows from file, dim %d",
        kind, path.name, found, len(vocab) - 1, dim,
    )
    return EmbeddingTable(kind, vocab, matrix)


def write_embeddings(path: str | Path, tokens: list[str], matrix: np.ndarray) -> None:
    """Write the text format read by load_embeddings (6 decimals)."""
    lines = [f"{len(tokens)} {matrix.shape[1]}"]
    for token, row in zip(tokens, matrix):
        lines.append(token + " " + " ".join(f"{v:.6f}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def unit_rows(matrix: np.ndarray) -> np.ndarray:
    """Rows scaled to unit length; zero rows stay zero."""
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return np.where(norms > 0.0, matrix / safe, 0.0)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; 0 when either vector has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvariantError(f"cosine of vectors with shapes {a.shape} and {b.shape}")
    value = float(np.dot(unit_rows(a), unit_rows(b)))
    return min(1.0, max(-1.0, value))


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine between rows of a (n x d) and b (m x d)."""
    return unit_rows(a) @ unit_rows(b).T
