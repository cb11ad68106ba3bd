"""KNRM: cosine interactions, Gaussian kernel pooling, tanh ranking layer.

Gradients of the pairwise hinge loss are written out by hand and flow
through the ranking layer, the clamped log pooling, the kernels and, when
embeddings are trainable, the cosine normalisation.
"""
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from cnir.core.exceptions import InvariantError
from cnir.core.optim import Adam, check_finite
from cnir.models.knrm import KernelBank, KnrmParameters
from cnir.schemas.corpus import Document, JudgmentSet, RankedList
from cnir.services.lexical import EmbeddingTable, cosine_matrix, unit_rows

logger = logging.getLogger(__name__)

LOG_CLAMP = 1e-10
MARGIN = 1.0


class Ranker(Protocol):
    """Scores a query against a document; KNRM and BM25 implement it."""

    trainable: bool

    def score(self, query_tokens: Sequence[str], document: Document) -> float: ...

    def digest(self) -> str: ...


def interaction_matrix(
    query_tokens: Sequence[str],
    doc_tokens: Sequence[str],
    emb: EmbeddingTable,
) -> np.ndarray:
    """M[i, j] = cosine(query word i, document word j)."""
    if not query_tokens:
        raise InvariantError("interaction matrix needs a non-empty query")
    if not doc_tokens:
        raise InvariantError("interaction matrix needs a non-empty document")
    return cosine_matrix(emb.lookup(query_tokens), emb.lookup(doc_tokens))


def _kernel_values(matrix: np.ndarray, bank: KernelBank) -> tuple[np.ndarray, np.ndarray]:
    """(M - mu_t) and exp(-(M - mu_t)^2 / 2 sigma_t^2), both (T, n, m)."""
    diff = matrix[None, :, :] - bank.mus[:, None, None]
    values = np.exp(-(diff ** 2) / (2.0 * bank.sigmas[:, None, None] ** 2))
    return diff, values


def kernel_pool(matrix: np.ndarray, bank: KernelBank) -> np.ndarray:
    """phi_t = sum_i log(max(sum_j K_t(M_ij), 1e-10))."""
    if matrix.size == 0:
        raise InvariantError("kernel pooling of an empty matrix")
    _, values = _kernel_values(matrix, bank)
    soft_tf = values.sum(axis=2)
    return np.log(np.maximum(soft_tf, LOG_CLAMP)).sum(axis=1)


@dataclass
class _Forward:
    q_ids: np.ndarray
    d_ids: np.ndarray
    q_unit: np.ndarray
    d_unit: np.ndarray
    q_norm: np.ndarray
    d_norm: np.ndarray
    diff: np.ndarray
    kernels: np.ndarray
    soft_tf: np.ndarray
    phi: np.ndarray
    score: float


def _forward(params: KnrmParameters, query_tokens: Sequence[str], doc_tokens: Sequence[str]) -> _Forward:
    if not query_tokens:
        raise InvariantError("cannot score an empty query")
    if not doc_tokens:
        raise InvariantError("cannot score an empty document")
    table = params.embeddings
    q_ids = table.vocab.ids(query_tokens)
    d_ids = table.vocab.ids(doc_tokens)
    q_raw = table.matrix[q_ids]
    d_raw = table.matrix[d_ids]
    q_unit, d_unit = unit_rows(q_raw), unit_rows(d_raw)
    diff, kernels = _kernel_values(q_unit @ d_unit.T, params.bank)
    soft_tf = kernels.sum(axis=2)
    phi = np.log(np.maximum(soft_tf, LOG_CLAMP)).sum(axis=1)
    score = float(np.tanh(params.w @ phi + params.b))
    return _Forward(
        q_ids, d_ids, q_unit, d_unit,
        np.linalg.norm(q_raw, axis=1, keepdims=True),
        np.linalg.norm(d_raw, axis=1, keepdims=True),
        diff, kernels, soft_tf, phi, score,
    )


def _unit_backward(unit: np.ndarray, norm: np.ndarray, d_unit: np.ndarray) -> np.ndarray:
    """Gradient through x / |x|; zero rows get zero gradient."""
    radial = np.sum(unit * d_unit, axis=1, keepdims=True)
    safe = np.where(norm > 0.0, norm, 1.0)
    return np.where(norm > 0.0, (d_unit - unit * radial) / safe, 0.0)


def _backward(
    params: KnrmParameters,
    fwd: _Forward,
    d_score: float,
    grads: dict[str, np.ndarray],
) -> None:
    """Accumulate d(loss)/d(params) into grads given d(loss)/d(score)."""
    d_pre = d_score * (1.0 - fwd.score ** 2)
    grads["w"] += d_pre * fwd.phi
    grads["b"] += d_pre
    if "embeddings" not in grads:
        return
    d_phi = d_pre * params.w
    active = fwd.soft_tf >= LOG_CLAMP
    safe_tf = np.where(active, fwd.soft_tf, 1.0)
    d_soft = np.where(active, d_phi[:, None] / safe_tf, 0.0)
    d_kernel = fwd.kernels * (-fwd.diff / (params.bank.sigmas[:, None, None] ** 2))
    d_matrix = np.einsum("tn,tnm->nm", d_soft, d_kernel)
    d_q = _unit_backward(fwd.q_unit, fwd.q_norm, d_matrix @ fwd.d_unit)
    d_d = _unit_backward(fwd.d_unit, fwd.d_norm, d_matrix.T @ fwd.q_unit)
    np.add.at(grads["embeddings"], fwd.q_ids, d_q)
    np.add.at(grads["embeddings"], fwd.d_ids, d_d)


def score(query_tokens: Sequence[str], doc_tokens: Sequence[str], params: KnrmParameters) -> float:
    """f(q, d) = tanh(w . phi(M) + b)."""
    return _forward(params, query_tokens, doc_tokens).score


def pairwise_loss(
    query_tokens: Sequence[str],
    d_plus: Sequence[str],
    d_minus: Sequence[str],
    params: KnrmParameters,
    grades: tuple[int, int] | None = None,
) -> float:
    """max(0, 1 - f(q, d+) + f(q, d-)); grades, when given, must be ordered."""
    if grades is not None and grades[0] <= grades[1]:
        raise InvariantError(f"pair grades {grades} are not strictly ordered")
    return max(0.0, MARGIN - score(query_tokens, d_plus, params) + score(query_tokens, d_minus, params))


def _zero_grads(params: KnrmParameters) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(params.tensors[name]) for name in params.trainable_names()}


def _accumulate_pair(
    query_tokens: Sequence[str],
    d_plus: Sequence[str],
    d_minus: Sequence[str],
    params: KnrmParameters,
    grads: dict[str, np.ndarray],
) -> float:
    plus = _forward(params, query_tokens, d_plus)
    minus = _forward(params, query_tokens, d_minus)
    loss = MARGIN - plus.score + minus.score
    if loss <= 0.0:
        return 0.0
    _backward(params, plus, -1.0, grads)
    _backward(params, minus, 1.0, grads)
    return loss


def knrm_gradients(
    query_tokens: Sequence[str],
    d_plus: Sequence[str],
    d_minus: Sequence[str],
    params: KnrmParameters,
) -> tuple[float, dict[str, np.ndarray]]:
    """Hinge loss and its gradients for w, b and (if trainable) embeddings."""
    grads = _zero_grads(params)
    loss = _accumulate_pair(query_tokens, d_plus, d_minus, params, grads)
    check_finite(grads)
    return loss, grads


def build_pairs(
    pool: RankedList,
    judgments: JudgmentSet,
    documents: Mapping[str, Document],
) -> list[tuple[str, str]]:
    """All (d+, d-) in the pool with grade(d+) > grade(d-); empty docs left out."""
    graded = [
        (doc_id, judgments.grade(pool.query_id, doc_id))
        for doc_id in pool.doc_ids
        if documents[doc_id].tokens
    ]
    return [
        (plus, minus)
        for plus, g_plus in graded
        for minus, g_minus in graded
        if g_plus > g_minus
    ]


def rerank(
    query_tokens: Sequence[str],
    pool: RankedList,
    ranker: Ranker,
    documents: Mapping[str, Document],
) -> RankedList:
    """Reorder the pool by ranker score, ties by doc_id; empty docs go last."""
    scored = []
    for doc_id in pool.doc_ids:
        doc = documents[doc_id]
        value = ranker.score(query_tokens, doc) if doc.tokens else float("-inf")
        scored.append((doc_id, value))
    scored.sort(key=lambda entry: (-entry[1], entry[0]))
    return RankedList(query_id=pool.query_id, entries=tuple(scored))


class KnrmRanker:
    """Trainable KNRM behind the Ranker protocol, with its own Adam state."""

    trainable = True

    def __init__(self, params: KnrmParameters, lr: float = 1e-3):
        self.params = params
        self.optimizer = Adam(lr)

    def score(self, query_tokens: Sequence[str], document: Document) -> float:
        return score(query_tokens, document.tokens, self.params)

    def digest(self) -> str:
        return self.params.digest()

    def train_query(
        self,
        query_tokens: Sequence[str],
        pairs: Sequence[tuple[Document, Document]],
    ) -> tuple[float, bool]:
        """One Adam step on the mean gradient of a query's pairs.

        No step is taken when every pair already meets the margin, so the
        parameters only move if some pair has positive loss. Returns
        (mean loss, stepped).
        """
        if not pairs:
            return 0.0, False
        grads = _zero_grads(self.params)
        total = 0.0
        active = 0
        for d_plus, d_minus in pairs:
            loss = _accumulate_pair(query_tokens, d_plus.tokens, d_minus.tokens, self.params, grads)
            total += loss
            active += loss > 0.0
        if not active:
            return 0.0, False
        for grad in grads.values():
            grad /= len(pairs)
        self.optimizer.step(self.params.tensors, grads)
        return total / len(pairs), True
