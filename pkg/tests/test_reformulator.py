import numpy as np
import pytest

from cnir.core.exceptions import GradientError, InvariantError
from cnir.core.gradcheck import gradient_mismatches
from cnir.core.optim import Adagrad
from cnir.models.policy import PolicyParameters
from cnir.schemas.corpus import Query
from cnir.schemas.knowledge import CandidateTermSet
from cnir.services.lexical import EmbeddingTable, Vocabulary
from cnir.services.reformulator import (
    QueryReformulator,
    ReformulationAction,
    _sequence_log_prob,
    action_probabilities,
    draw_terms,
    encode_query,
    greedy_reformulation,
    policy_backward,
    policy_forward,
    reinforce_gradients,
    reinforce_update,
    sample_reformulation,
    softmax,
)
from conftest import random_table

WORDS = [f"w{i}" for i in range(10)]
DIM = 4


@pytest.fixture
def setup():
    rng = np.random.default_rng(31)
    return _setup(rng)


def _setup(rng, conv_layers=1):
    word_emb = random_table(WORDS, DIM, rng)
    entity_emb = EmbeddingTable("entity", Vocabulary(["E1", "E2"]), rng.normal(size=(4, DIM)))
    params = PolicyParameters.initialize(rng, DIM, conv_layers, feature_maps=3, windows=(1, 2), term_hidden=3, score_hidden=3)
    for name, arr in params.tensors.items():
        # keep every ReLU unit active so max-pooling is differentiable at the test point
        if name.startswith("conv") and "_b" in name:
            arr[:] = 1.0
    params.tensors["head_U"] *= 10.0
    query = Query(query_id="q", tokens=("w0", "w1", "w2"), linked_entities=("E1", "E9"))
    cands = CandidateTermSet(query_id="q", prf_terms=("w3", "w4", "w5"), know_terms=("w6",))
    return word_emb, entity_emb, params, query, cands


def _flat(grads):
    return np.concatenate([grads[name].ravel() for name in sorted(grads)])


class TestForward:
    @pytest.mark.parametrize("tokens", [("w0",), ("w0", "w1", "w2", "w3", "w4", "w5", "w6")])
    def test_encoding_size_is_fixed(self, setup, tokens):
        word_emb, entity_emb, params, _, _ = setup
        query = Query(query_id="q", tokens=tokens)
        assert encode_query(query, word_emb, entity_emb, params).shape == (params.query_dim,)

    def test_unknown_entities_are_skipped(self, setup):
        word_emb, entity_emb, params, query, _ = setup
        with_unknown = encode_query(query, word_emb, entity_emb, params)
        known_only = encode_query(query.model_copy(update={"linked_entities": ("E1",)}), word_emb, entity_emb, params)
        np.testing.assert_array_equal(with_unknown, known_only)

    def test_entity_dimension_mismatch(self, setup):
        word_emb, _, params, query, _ = setup
        entity_emb = EmbeddingTable("entity", Vocabulary(["E1"]), np.ones((3, DIM + 1)))
        with pytest.raises(InvariantError):
            encode_query(query, word_emb, entity_emb, params)

    def test_probabilities_form_a_distribution(self, setup):
        word_emb, entity_emb, params, query, cands = setup
        fwd = policy_forward(query, cands, word_emb, entity_emb, params)
        assert fwd.probs.shape == (4,)
        assert fwd.probs.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(action_probabilities(fwd.states, params), fwd.probs)

    def test_empty_states(self, setup):
        *_, params, _, _ = setup
        with pytest.raises(InvariantError):
            action_probabilities(np.zeros((0, params.query_dim + params.term_hidden)), params)

    def test_policy_without_entities(self, setup):
        word_emb, _, params, query, cands = setup
        fwd = policy_forward(query, cands, word_emb, None, params)
        assert fwd.probs.sum() == pytest.approx(1.0)

    def test_identical_states_are_equally_likely(self, setup, rng):
        *_, params, _, _ = setup
        state = rng.normal(size=params.query_dim + params.term_hidden)
        np.testing.assert_allclose(action_probabilities(np.tile(state, (2, 1)), params), [0.5, 0.5])

    def test_softmax_values(self, rng):
        np.testing.assert_allclose(softmax(np.array([np.log(3.0), 0.0])), [0.75, 0.25])
        logits = rng.normal(size=5)
        for shift in (-50.0, 1000.0):
            np.testing.assert_allclose(softmax(logits + shift), softmax(logits), rtol=1e-12)

    @pytest.mark.parametrize("conv_layers", [1, 2])
    def test_zero_inputs_encode_to_zero(self, conv_layers):
        _, _, params, query, _ = _setup(np.random.default_rng(5), conv_layers)
        for name, arr in params.tensors.items():
            if name.startswith("conv") and "_b" in name:
                arr[:] = 0.0
        word_emb = EmbeddingTable("word", Vocabulary(WORDS), np.zeros((len(WORDS) + 2, DIM)))
        np.testing.assert_array_equal(encode_query(query, word_emb, None, params), np.zeros(params.query_dim))


class TestGradients:
    @pytest.mark.parametrize("conv_layers", [1, 2])
    def test_log_prob_finite_differences(self, conv_layers):
        rng = np.random.default_rng(41 + conv_layers)
        for _ in range(3):
            word_emb, entity_emb, params, query, cands = _setup(rng, conv_layers)
            indices = [int(i) for i in rng.permutation(4)[:2]]

            def log_prob():
                fwd = policy_forward(query, cands, word_emb, entity_emb, params)
                return _sequence_log_prob(fwd.probs, indices)[0]

            fwd = policy_forward(query, cands, word_emb, entity_emb, params)
            _, logit_grad = _sequence_log_prob(fwd.probs, indices)
            grads = policy_backward(fwd, logit_grad, params)
            failures = gradient_mismatches(log_prob, params.tensors, grads)
            assert not failures, failures[:5]

    def test_reinforce_loss_finite_differences(self, setup):
        word_emb, entity_emb, params, query, cands = setup
        fwd = policy_forward(query, cands, word_emb, entity_emb, params)
        sampler = np.random.default_rng(3)
        actions = [sample_reformulation(query, cands, params, word_emb, entity_emb, 2, sampler, forward=fwd) for _ in range(3)]
        rewards = [0.9, 0.1, 0.4]
        baseline = 0.3

        def loss():
            f = policy_forward(query, cands, word_emb, entity_emb, params)
            return -sum(
                (r - baseline) * _sequence_log_prob(f.probs, a.chosen_indices)[0] for a, r in zip(actions, rewards)
            ) / len(actions)

        grads = reinforce_gradients(fwd, list(zip(actions, rewards)), params, baseline=baseline)
        assert not gradient_mismatches(loss, params.tensors, grads)

    def test_monte_carlo_matches_enumeration(self, setup):
        word_emb, entity_emb, params, query, cands = setup
        fwd = policy_forward(query, cands, word_emb, entity_emb, params)
        p = fwd.probs
        rewards = np.array([1.0, 0.0, 0.5, 0.2])
        exact = p * (rewards - p @ rewards)

        n = 100_000
        sampler = np.random.default_rng(99)
        counts = np.zeros(4)
        for _ in range(n):
            indices, _, _ = draw_terms(p, 1, sampler)
            counts[indices[0]] += 1
        freq = counts / n

        per_action = rewards[:, None] * (np.eye(4) - p)
        estimate = freq @ per_action
        se = np.sqrt((freq @ per_action ** 2 - estimate ** 2) / n)
        assert np.all(np.abs(estimate - exact) <= 3.0 * se + 1e-12)

        per_action_params = np.array([_flat(policy_backward(fwd, row, params)) for row in per_action])
        estimate_params = freq @ per_action_params
        exact_params = _flat(policy_backward(fwd, exact, params))
        se_params = np.sqrt(np.maximum(freq @ per_action_params ** 2 - estimate_params ** 2, 0.0) / n)
        assert np.all(np.abs(estimate_params - exact_params) <= 3.5 * se_params + 1e-10)

    def test_constant_rewards_cancel_exactly(self, setup):
        word_emb, entity_emb, params, query, cands = setup
        fwd = policy_forward(query, cands, word_emb, entity_emb, params)
        sampler = np.random.default_rng(5)
        episodes = [
            (sample_reformulation(query, cands, params, word_emb, entity_emb, 3, sampler, forward=fwd), 0.37)
            for _ in range(5)
        ]
        before = params.digest()
        reinforce_update(fwd, episodes, params, Adagrad(0.5), baseline_on=True)
        assert params.digest() == before

    def test_zero_reward_zero_baseline(self, setup):
        word_emb, entity_emb, params, query, cands = setup
        fwd = policy_forward(query, cands, word_emb, entity_emb, params)
        action = sample_reformulation(query, cands, params, word_emb, entity_emb, 3, np.random.default_rng(0), forward=fwd)
        grads = reinforce_gradients(fwd, [(action, 0.0)], params, baseline=0.0)
        assert all(not np.any(g) for g in grads.values())

    def test_non_finite_gradient(self, setup):
        word_emb, entity_emb, params, query, cands = setup
        fwd = policy_forward(query, cands, word_emb, entity_emb, params)
        bad = ReformulationAction(("w3",), (0,), 0.0, query.tokens + ("w3",), np.array([np.nan, 0.0, 0.0, 0.0]))
        with pytest.raises(GradientError):
            reinforce_gradients(fwd, [(bad, 1.0)], params, baseline=0.0)


class TestSampling:
    def test_empty_candidates(self, setup):
        word_emb, entity_emb, params, query, _ = setup
        action = sample_reformulation(
            query, CandidateTermSet(query_id="q"), params, word_emb, entity_emb, 3, np.random.default_rng(0)
        )
        assert action.reformulated_query == query.tokens
        assert action.log_prob_sum == 0.0

    def test_fewer_candidates_than_k(self, setup):
        word_emb, entity_emb, params, query, _ = setup
        cands = CandidateTermSet(query_id="q", prf_terms=("w3", "w4"))
        action = sample_reformulation(query, cands, params, word_emb, entity_emb, 3, np.random.default_rng(0))
        assert sorted(action.chosen_terms) == ["w3", "w4"]
        assert action.reformulated_query[:3] == query.tokens

    def test_same_seed_same_actions(self, setup):
        word_emb, entity_emb, params, query, cands = setup
        first, second = (
            sample_reformulation(query, cands, params, word_emb, entity_emb, 3, np.random.default_rng(17))
            for _ in range(2)
        )
        assert first == second
        np.testing.assert_array_equal(first.logit_grad, second.logit_grad)

    def test_with_replacement_draws_k(self, setup):
        word_emb, entity_emb, params, query, cands = setup
        action = sample_reformulation(
            query, cands, params, word_emb, entity_emb, 6, np.random.default_rng(0), without_replacement=False
        )
        assert len(action.chosen_terms) == 6

    def test_draw_log_prob_matches_sequence(self, rng):
        probs = np.array([0.1, 0.2, 0.3, 0.4])
        indices, log_prob, grad = draw_terms(probs, 3, rng)
        assert len(set(indices)) == 3
        expected, expected_grad = _sequence_log_prob(probs, indices)
        assert log_prob == pytest.approx(expected)
        np.testing.assert_allclose(grad, expected_grad)

    def test_greedy_ties_keep_candidate_order(self, setup):
        word_emb, entity_emb, params, query, cands = setup
        params.tensors["head_U"][:] = 0.0
        action = greedy_reformulation(query, cands, params, word_emb, entity_emb, 3)
        assert action.chosen_indices == (0, 1, 2)
        assert action.chosen_terms == ("w3", "w4", "w5")

    def test_greedy_is_top_k(self, setup):
        word_emb, entity_emb, params, query, cands = setup
        fwd = policy_forward(query, cands, word_emb, entity_emb, params)
        action = greedy_reformulation(query, cands, params, word_emb, entity_emb, 2)
        assert set(action.chosen_indices) == set(np.argsort(-fwd.probs)[:2].tolist())


class TestQueryReformulator:
    def test_apply_averages_batch(self, setup):
        word_emb, entity_emb, params, query, cands = setup
        reformulator = QueryReformulator(params, word_emb, entity_emb, k=2, lr=0.1)
        grads = {name: np.ones_like(arr) for name, arr in params.tensors.items()}
        before = params.copy()
        reformulator.apply([grads, {name: -g for name, g in grads.items()}])
        # the two gradients cancel; Adagrad with a zero gradient leaves parameters alone
        for name in params.tensors:
            np.testing.assert_array_equal(params.tensors[name], before.tensors[name])

    def test_checkpoint_round_trip(self, setup, tmp_path):
        word_emb, entity_emb, params, query, cands = setup
        params.save(tmp_path / "policy.ckpt")
        loaded = PolicyParameters.load(tmp_path / "policy.ckpt")
        assert loaded.digest() == params.digest()
        a = greedy_reformulation(query, cands, params, word_emb, entity_emb, 2)
        b = greedy_reformulation(query, cands, loaded, word_emb, entity_emb, 2)
        assert a == b
