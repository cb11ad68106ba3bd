"""Query reformulator: a CNN policy over candidate expansion terms trained by REINFORCE.

Forward pass for one query with candidates c_1..c_n:

    X_0      = [word vectors; entity vectors]             (L x D)
    X_{l+1}  = concat_h ReLU(conv_h(X_l))                 (L x F*|windows|)
    q_hat    = max over positions of X_N
    c'_j     = tanh(A c_j + a)
    s_j      = [q_hat; c'_j]
    logit_j  = U . tanh(W s_j) + b
    pi       = softmax(logits)

Convolutions pad on the right with zeros so every layer keeps length L.
"""
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from cnir.core.exceptions import InvariantError
from cnir.core.optim import Adagrad, check_finite
from cnir.models.policy import PolicyParameters
from cnir.schemas.corpus import Query
from cnir.schemas.knowledge import CandidateTermSet
from cnir.services.lexical import EmbeddingTable

logger = logging.getLogger(__name__)


@dataclass
class _ConvCache:
    patches: np.ndarray
    pre: np.ndarray


@dataclass
class EncoderCache:
    layers: list[list[_ConvCache]]
    output: np.ndarray
    argmax: np.ndarray


@dataclass
class PolicyForward:
    """Everything the backward pass needs for one (query, candidates) pair."""

    terms: tuple[str, ...]
    encoder: EncoderCache
    q_hat: np.ndarray
    term_vectors: np.ndarray
    term_hidden: np.ndarray
    states: np.ndarray
    head_hidden: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


@dataclass(frozen=True)
class ReformulationAction:
    """Chosen expansion terms and the gradient of their log-probability w.r.t. the logits."""

    chosen_terms: tuple[str, ...]
    chosen_indices: tuple[int, ...]
    log_prob_sum: float
    reformulated_query: tuple[str, ...]
    logit_grad: np.ndarray = field(compare=False, repr=False)


def _input_sequence(
    query: Query,
    word_emb: EmbeddingTable,
    entity_emb: EmbeddingTable | None,
    params: PolicyParameters,
) -> np.ndarray:
    if word_emb.dimension != params.embedding_dim:
        raise InvariantError(
            f"word embeddings have dimension {word_emb.dimension}, policy expects {params.embedding_dim}"
        )
    rows = [word_emb.lookup(query.tokens)]
    if entity_emb is not None:
        entities = [e for e in query.linked_entities if e in entity_emb.vocab]
        if entities:
            if entity_emb.dimension != params.embedding_dim:
                raise InvariantError(
                    f"entity embeddings have dimension {entity_emb.dimension}, "
                    f"policy expects {params.embedding_dim}"
                )
            rows.append(entity_emb.lookup(entities))
    return np.vstack(rows)


def _conv_forward(x: np.ndarray, params: PolicyParameters, layer: int) -> tuple[np.ndarray, list[_ConvCache]]:
    length, dim = x.shape
    outputs, caches = [], []
    for h in params.windows:
        padded = np.vstack([x, np.zeros((h - 1, dim))])
        patches = sliding_window_view(padded, (h, dim)).reshape(length, h * dim)
        pre = patches @ params.tensors[f"conv{layer}_w{h}"].T + params.tensors[f"conv{layer}_b{h}"]
        outputs.append(np.maximum(pre, 0.0))
        caches.append(_ConvCache(patches, pre))
    return np.hstack(outputs), caches


def _encode(
    query: Query,
    word_emb: EmbeddingTable,
    entity_emb: EmbeddingTable | None,
    params: PolicyParameters,
) -> tuple[np.ndarray, EncoderCache]:
    x = _input_sequence(query, word_emb, entity_emb, params)
    layers = []
    for layer in range(params.conv_layers):
        x, caches = _conv_forward(x, params, layer)
        layers.append(caches)
    argmax = np.argmax(x, axis=0)
    q_hat = x[argmax, np.arange(x.shape[1])]
    return q_hat, EncoderCache(layers, x, argmax)


def encode_query(
    query: Query,
    word_emb: EmbeddingTable,
    entity_emb: EmbeddingTable | None,
    params: PolicyParameters,
) -> np.ndarray:
    """Pooled query representation q_hat; length F * |windows| for any query length."""
    return _encode(query, word_emb, entity_emb, params)[0]


def candidate_states(
    q_hat: np.ndarray,
    terms: Sequence[str],
    word_emb: EmbeddingTable,
    params: PolicyParameters,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (term vectors c_j, hidden c'_j, states s_j)."""
    vectors = word_emb.lookup(terms)
    hidden = np.tanh(vectors @ params.tensors["term_A"].T + params.tensors["term_a"])
    states = np.hstack([np.tile(q_hat, (len(terms), 1)), hidden])
    return vectors, hidden, states


def _head(states: np.ndarray, params: PolicyParameters) -> tuple[np.ndarray, np.ndarray]:
    hidden = np.tanh(states @ params.tensors["head_W"].T)
    logits = hidden @ params.tensors["head_U"] + params.tensors["head_b"][0]
    return hidden, logits


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - np.max(logits))
    return shifted / shifted.sum()


def action_probabilities(states: np.ndarray, params: PolicyParameters) -> np.ndarray:
    """softmax over candidates of U . tanh(W s_j) + b."""
    if len(states) == 0:
        raise InvariantError("action probabilities need at least one candidate")
    return softmax(_head(np.asarray(states), params)[1])


def policy_forward(
    query: Query,
    candidates: CandidateTermSet,
    word_emb: EmbeddingTable,
    entity_emb: EmbeddingTable | None,
    params: PolicyParameters,
) -> PolicyForward:
    terms = candidates.all_terms
    if not terms:
        raise InvariantError(f"query {query.query_id} has no candidate terms")
    q_hat, cache = _encode(query, word_emb, entity_emb, params)
    vectors, hidden, states = candidate_states(q_hat, terms, word_emb, params)
    head_hidden, logits = _head(states, params)
    return PolicyForward(terms, cache, q_hat, vectors, hidden, states, head_hidden, logits, softmax(logits))


def _encoder_backward(
    cache: EncoderCache,
    d_q_hat: np.ndarray,
    params: PolicyParameters,
    grads: dict[str, np.ndarray],
) -> None:
    d_x = np.zeros_like(cache.output)
    d_x[cache.argmax, np.arange(d_x.shape[1])] += d_q_hat
    for layer in reversed(range(params.conv_layers)):
        length = d_x.shape[0]
        dim = params.layer_input_dim(layer)
        d_in = np.zeros((length, dim)) if layer > 0 else None
        offset = 0
        for h, conv in zip(params.windows, cache.layers[layer]):
            d_pre = d_x[:, offset:offset + params.feature_maps] * (conv.pre > 0.0)
            offset += params.feature_maps
            grads[f"conv{layer}_w{h}"] += d_pre.T @ conv.patches
            grads[f"conv{layer}_b{h}"] += d_pre.sum(axis=0)
            if d_in is not None:
                d_patches = d_pre @ params.tensors[f"conv{layer}_w{h}"]
                d_padded = np.zeros((length + h - 1, dim))
                for o in range(h):
                    d_padded[o:o + length] += d_patches[:, o * dim:(o + 1) * dim]
                d_in += d_padded[:length]
        if d_in is not None:
            d_x = d_in


def policy_backward(fwd: PolicyForward, d_logits: np.ndarray, params: PolicyParameters) -> dict[str, np.ndarray]:
    """Gradients of every policy tensor given d(objective)/d(logits)."""
    t = params.tensors
    grads = {name: np.zeros_like(arr) for name, arr in t.items()}
    grads["head_b"] += d_logits.sum()
    grads["head_U"] += fwd.head_hidden.T @ d_logits
    d_head_pre = np.outer(d_logits, t["head_U"]) * (1.0 - fwd.head_hidden ** 2)
    grads["head_W"] += d_head_pre.T @ fwd.states
    d_states = d_head_pre @ t["head_W"]
    q_dim = params.query_dim
    d_q_hat = d_states[:, :q_dim].sum(axis=0)
    d_term_pre = d_states[:, q_dim:] * (1.0 - fwd.term_hidden ** 2)
    grads["term_A"] += d_term_pre.T @ fwd.term_vectors
    grads["term_a"] += d_term_pre.sum(axis=0)
    _encoder_backward(fwd.encoder, d_q_hat, params, grads)
    return grads


def draw_terms(
    probs: np.ndarray,
    k: int,
    rng: np.random.Generator,
    without_replacement: bool = True,
) -> tuple[list[int], float, np.ndarray]:
    """Sample candidate indices.

    Without replacement the remaining probabilities are renormalised after
    each draw (min(k, n) draws); with replacement k independent draws are
    made. Returns (indices, sum of log-probabilities, d logprob / d logits).
    """
    if k < 1:
        raise InvariantError(f"K must be >= 1, got {k}")
    n = len(probs)
    remaining = np.ones(n, dtype=bool)
    chosen: list[int] = []
    log_prob = 0.0
    logit_grad = np.zeros(n)
    for _ in range(min(k, n) if without_replacement else k):
        p = np.where(remaining, probs, 0.0)
        p = p / p.sum()
        idx = int(rng.choice(n, p=p))
        chosen.append(idx)
        log_prob += float(np.log(p[idx]))
        logit_grad -= p
        logit_grad[idx] += 1.0
        if without_replacement:
            remaining[idx] = False
    return chosen, log_prob, logit_grad


def _sequence_log_prob(probs: np.ndarray, indices: Sequence[int]) -> tuple[float, np.ndarray]:
    """Log-probability of a fixed draw order under sequential renormalisation."""
    remaining = np.ones(len(probs), dtype=bool)
    log_prob = 0.0
    logit_grad = np.zeros(len(probs))
    for idx in indices:
        p = np.where(remaining, probs, 0.0)
        p = p / p.sum()
        log_prob += float(np.log(p[idx]))
        logit_grad -= p
        logit_grad[idx] += 1.0
        remaining[idx] = False
    return log_prob, logit_grad


def _unchanged(query: Query) -> ReformulationAction:
    return ReformulationAction((), (), 0.0, query.tokens, np.zeros(0))


def sample_reformulation(
    query: Query,
    candidates: CandidateTermSet,
    params: PolicyParameters,
    word_emb: EmbeddingTable,
    entity_emb: EmbeddingTable | None,
    k: int,
    rng: np.random.Generator,
    without_replacement: bool = True,
    forward: PolicyForward | None = None,
) -> ReformulationAction:
    """Draw K terms from pi and append them to the query."""
    if not len(candidates):
        return _unchanged(query)
    fwd = forward or policy_forward(query, candidates, word_emb, entity_emb, params)
    indices, log_prob, logit_grad = draw_terms(fwd.probs, k, rng, without_replacement)
    terms = tuple(fwd.terms[i] for i in indices)
    return ReformulationAction(terms, tuple(indices), log_prob, query.tokens + terms, logit_grad)


def greedy_reformulation(
    query: Query,
    candidates: CandidateTermSet,
    params: PolicyParameters,
    word_emb: EmbeddingTable,
    entity_emb: EmbeddingTable | None,
    k: int,
) -> ReformulationAction:
    """Top-K candidates by probability; ties keep candidate order."""
    if not len(candidates):
        return _unchanged(query)
    fwd = policy_forward(query, candidates, word_emb, entity_emb, params)
    indices = [int(i) for i in np.argsort(-fwd.probs, kind="stable")[:k]]
    log_prob, logit_grad = _sequence_log_prob(fwd.probs, indices)
    terms = tuple(fwd.terms[i] for i in indices)
    return ReformulationAction(terms, tuple(indices), log_prob, query.tokens + terms, logit_grad)


def reinforce_gradients(
    fwd: PolicyForward,
    episodes: Sequence[tuple[ReformulationAction, float]],
    params: PolicyParameters,
    baseline: float | None = None,
    baseline_on: bool = True,
) -> dict[str, np.ndarray]:
    """Gradient of the loss -(1/M) sum_m (R_m - baseline) sum_k log pi(a_k).

    With baseline=None the mean episode reward is used when baseline_on is
    set, and 0 otherwise. Constant rewards under the mean baseline give an
    exactly zero gradient.
    """
    if not episodes:
        raise InvariantError("REINFORCE needs at least one episode")
    rewards = np.array([r for _, r in episodes], dtype=np.float64)
    if baseline is None:
        if baseline_on and rewards.max() == rewards.min():
            advantages = np.zeros_like(rewards)
        else:
            advantages = rewards - (rewards.mean() if baseline_on else 0.0)
    else:
        advantages = rewards - baseline

    d_logits = np.zeros(len(fwd.terms))
    for (action, _), adv in zip(episodes, advantages):
        if adv != 0.0:
            d_logits += adv * action.logit_grad
    d_logits /= -len(episodes)
    if not np.any(d_logits):
        return {name: np.zeros_like(arr) for name, arr in params.tensors.items()}
    grads = policy_backward(fwd, d_logits, params)
    check_finite(grads)
    return grads


def reinforce_update(
    fwd: PolicyForward,
    episodes: Sequence[tuple[ReformulationAction, float]],
    params: PolicyParameters,
    optimizer: Adagrad,
    baseline: float | None = None,
    baseline_on: bool = True,
) -> PolicyParameters:
    """One Adagrad step on a single query's episodes."""
    optimizer.step(params.tensors, reinforce_gradients(fwd, episodes, params, baseline, baseline_on))
    return params


class QueryReformulator:
    """Policy parameters, fixed input embeddings and the Adagrad state."""

    def __init__(
        self,
        params: PolicyParameters,
        word_emb: EmbeddingTable,
        entity_emb: EmbeddingTable | None,
        k: int = 3,
        lr: float = 1e-5,
        without_replacement: bool = True,
        baseline_on: bool = True,
    ):
        self.params = params
        self.word_emb = word_emb
        self.entity_emb = entity_emb
        self.k = k
        self.without_replacement = without_replacement
        self.baseline_on = baseline_on
        self.optimizer = Adagrad(lr)

    def forward(self, query: Query, candidates: CandidateTermSet) -> PolicyForward:
        return policy_forward(query, candidates, self.word_emb, self.entity_emb, self.params)

    def sample(
        self,
        query: Query,
        candidates: CandidateTermSet,
        rng: np.random.Generator,
        forward: PolicyForward | None = None,
    ) -> ReformulationAction:
        return sample_reformulation(
            query, candidates, self.params, self.word_emb, self.entity_emb,
            self.k, rng, self.without_replacement, forward,
        )

    def greedy(self, query: Query, candidates: CandidateTermSet) -> ReformulationAction:
        return greedy_reformulation(query, candidates, self.params, self.word_emb, self.entity_emb, self.k)

    def gradients(
        self,
        fwd: PolicyForward,
        episodes: Sequence[tuple[ReformulationAction, float]],
    ) -> dict[str, np.ndarray]:
        return reinforce_gradients(fwd, episodes, self.params, baseline_on=self.baseline_on)

    def apply(self, grads: list[dict[str, np.ndarray]]) -> None:
        """Average per-query gradients of a batch and take one Adagrad step."""
        if not grads:
            return
        mean = {name: sum(g[name] for g in grads) / len(grads) for name in grads[0]}
        self.optimizer.step(self.params.tensors, mean)

    def digest(self) -> str:
        return self.params.digest()
