"""
Testes para o serviço de política Plackett-Luce.
"""

import itertools

import numpy as np
import pytest
from scipy.special import softmax

from needrank.core.errors import DataFormatError, PolicyError
from needrank.models import NeedKind, PolicyGradient, PolicyParams, Ranking, Rollout
from needrank.services.needs_service import TrendIndex
from needrank.services.policy_service import (
    FeatureSpace,
    PolicyOptimizer,
    backprop,
    evaluate_rollout,
    greedy_ranking,
    gumbel_rankings,
    load_policy,
    rollout_logprob_and_grad,
    sample_rollout,
    save_policy,
    strategy_probabilities,
)

from tests.conftest import make_context


def fixed_rollout(strategy, order, features):
    """Rollout com ordem escolhida à mão (log-probs recalculadas por evaluate_rollout)."""
    order = np.asarray(order)
    return Rollout(
        strategy=strategy,
        ranking=Ranking.of(order.tolist()),
        step_logprobs=np.zeros(order.size + 1),
        positions=order,
        features_used=features,
    )


def random_params(rng, S, D, scale=1.0):
    return PolicyParams(rng.normal(0, scale, (S, D)), rng.normal(0, scale, S),
                        temperature=float(rng.uniform(0.5, 2.0)))


@pytest.mark.unit
class TestFeatureSpace:
    """Testes do pipeline de características."""

    def test_trend_context_features(self, toy_embeddings, toy_topics, toy_trend_log):
        """Cosseno, tendência, nicho e one-hot da necessidade por candidato."""
        space = FeatureSpace(toy_embeddings, toy_topics, TrendIndex(toy_trend_log), projection_dim=2)
        ctx = make_context(NeedKind.trend_promotion(0.7))
        features = space.context_features(ctx)
        assert features.shape == (4, space.dim)
        assert space.dim == 9
        assert features[:, 0] == pytest.approx([1.0, 0.8, 0.6, -1.0], abs=1e-12)
        assert features[:, 1] == pytest.approx([1.0, 1 / 3, 0.0, 2 / 3], abs=1e-12)
        assert features[:, 2].tolist() == [0.0, 1.0, 0.0, 0.0]
        assert np.all(features[:, 5:] == [0.0, 0.0, 1.0, 0.0])

    def test_featurize_single_item(self, toy_embeddings, toy_topics):
        """featurize devolve a linha do candidato."""
        space = FeatureSpace(toy_embeddings, toy_topics, projection_dim=2)
        ctx = make_context(NeedKind.niche_discovery(0.5))
        assert np.array_equal(space.featurize(ctx, 3), space.context_features(ctx)[2])
        # Sem índice de tendência a coluna é zero
        assert np.all(space.context_features(ctx)[:, 1] == 0.0)

    def test_item_outside_candidates_rejected(self, toy_embeddings, toy_topics):
        """Item fora dos candidatos é erro."""
        space = FeatureSpace(toy_embeddings, toy_topics, projection_dim=2)
        with pytest.raises(PolicyError):
            space.featurize(make_context(NeedKind.max_interest()), 10)

    def test_projection_is_seeded(self, toy_embeddings):
        """Mesma semente, mesma projeção."""
        first = FeatureSpace(toy_embeddings, projection_dim=3, seed=5)
        second = FeatureSpace(toy_embeddings, projection_dim=3, seed=5)
        assert np.array_equal(first.projection, second.projection)

    def test_missing_embedding_rejected(self, toy_embeddings):
        """Candidato sem embedding vira PolicyError."""
        space = FeatureSpace(toy_embeddings, projection_dim=2)
        with pytest.raises(PolicyError):
            space.context_features(make_context(NeedKind.max_interest(), candidates=(1, 2, 99)))


@pytest.mark.unit
class TestLogProbabilities:
    """Testes das log-probabilidades por passo."""

    def test_single_strategy_step_is_zero(self, rng):
        """S=1: log-prob do passo de estratégia é 0."""
        params = random_params(rng, 1, 3)
        logprobs, _ = evaluate_rollout(params, fixed_rollout(0, [2, 0, 1], rng.normal(size=(3, 3))))
        assert logprobs[0] == 0.0

    def test_uniform_policy(self, rng):
        """Parâmetros nulos: passo k tem log-prob -log(K-k+1)."""
        params = PolicyParams.zeros(3, 4)
        logprobs, entropies = evaluate_rollout(params, fixed_rollout(1, [4, 2, 0, 1, 3], rng.normal(size=(5, 4))))
        expected = -np.log([3, 5, 4, 3, 2, 1])
        assert logprobs == pytest.approx(expected, abs=1e-12)
        assert entropies == pytest.approx(-expected, abs=1e-12)

    def test_last_step_is_deterministic(self, rng):
        """O último item tem probabilidade 1."""
        params = random_params(rng, 2, 3)
        logprobs, _ = evaluate_rollout(params, fixed_rollout(1, [1, 2, 0], rng.normal(size=(3, 3))))
        assert logprobs[-1] == pytest.approx(0.0, abs=1e-15)

    def test_plackett_luce_normalization(self, rng):
        """Soma sobre todas as K! ordens é 1, por estratégia e marginalizada."""
        for K in range(1, 6):
            S, D = 2, 3
            params = random_params(rng, S, D)
            X = rng.normal(size=(K, D))
            marginal = 0.0
            for strategy in range(S):
                per_strategy = 0.0
                for order in itertools.permutations(range(K)):
                    logprobs, _ = evaluate_rollout(params, fixed_rollout(strategy, order, X))
                    per_strategy += np.exp(logprobs[1:].sum())
                    marginal += np.exp(logprobs.sum())
                assert per_strategy == pytest.approx(1.0, abs=1e-9)
            assert marginal == pytest.approx(1.0, abs=1e-9)

    def test_rollout_must_match_context(self, rng):
        """Rollout de outro contexto é rejeitado quando o contexto é informado."""
        params = PolicyParams.zeros(1, 2)
        ctx = make_context(NeedKind.max_interest())
        rollout = sample_rollout(params, ctx, rng, rng.normal(size=(4, 2)))
        other = make_context(NeedKind.max_interest(), context_id="outro")
        with pytest.raises(PolicyError):
            evaluate_rollout(params, rollout, other)


@pytest.mark.unit
class TestGradients:
    """Testes dos gradientes analíticos contra diferenças finitas."""

    @staticmethod
    def _numeric_jacobian(params, rollout, fn, h=1e-5):
        base = params.to_vector()
        columns = []
        for i in range(base.size):
            up, down = base.copy(), base.copy()
            up[i] += h
            down[i] -= h
            f_up = fn(PolicyParams.from_vector(up, params.n_strategies, params.dim, params.temperature), rollout)
            f_down = fn(PolicyParams.from_vector(down, params.n_strategies, params.dim, params.temperature), rollout)
            columns.append((f_up - f_down) / (2 * h))
        return np.column_stack(columns)

    def test_logprob_jacobian(self, rng):
        """Jacobiano das log-probs por passo em 100 pontos aleatórios (D=4, K=5)."""
        for _ in range(100):
            params = random_params(rng, 2, 4)
            X = rng.normal(size=(5, 4))
            rollout = fixed_rollout(int(rng.integers(2)), rng.permutation(5), X)
            _, analytic = rollout_logprob_and_grad(params, rollout)
            numeric = self._numeric_jacobian(params, rollout, lambda p, r: evaluate_rollout(p, r)[0])
            assert np.allclose(analytic, numeric, rtol=1e-4, atol=1e-7)

    def test_strategy_step_does_not_depend_on_weights(self, rng):
        """O passo de estratégia não tem gradiente nos pesos de score."""
        params = random_params(rng, 3, 4)
        rollout = fixed_rollout(2, rng.permutation(5), rng.normal(size=(5, 4)))
        _, jacobian = rollout_logprob_and_grad(params, rollout)
        assert np.all(jacobian[0, params.n_strategies:] == 0.0)

    def test_only_sampled_strategy_row_moves(self, rng):
        """Passos de item só afetam a linha da estratégia amostrada."""
        params = random_params(rng, 3, 2)
        rollout = fixed_rollout(1, rng.permutation(4), rng.normal(size=(4, 2)))
        grad = backprop(params, rollout, np.ones(5))
        assert np.all(grad.score_weights[[0, 2]] == 0.0)
        assert np.any(grad.score_weights[1] != 0.0)

    def test_backprop_matches_jacobian(self, rng):
        """backprop(dlogprob) = dlogprob @ jacobiano."""
        params = random_params(rng, 2, 3)
        rollout = fixed_rollout(0, rng.permutation(6), rng.normal(size=(6, 3)))
        weights = rng.normal(size=7)
        _, jacobian = rollout_logprob_and_grad(params, rollout)
        assert backprop(params, rollout, weights).to_vector() == pytest.approx(weights @ jacobian, abs=1e-12)

    def test_entropy_gradient(self, rng):
        """Gradiente das entropias por passo contra diferenças finitas."""
        params = random_params(rng, 2, 3)
        rollout = fixed_rollout(1, rng.permutation(5), rng.normal(size=(5, 3)))
        coeffs = rng.normal(size=6)
        analytic = backprop(params, rollout, np.zeros(6), coeffs).to_vector()
        numeric = self._numeric_jacobian(params, rollout, lambda p, r: evaluate_rollout(p, r)[1] @ coeffs)
        assert np.allclose(analytic, numeric.ravel(), rtol=1e-4, atol=1e-8)


@pytest.mark.unit
class TestSampling:
    """Testes de amostragem e decodificação."""

    def test_first_item_frequency(self, rng):
        """Frequência do primeiro item converge para softmax dos scores."""
        scores = np.array([1.0, 0.0, -0.5, 2.0])
        first = gumbel_rankings(scores, 40_000, rng)[:, 0]
        freq = np.bincount(first, minlength=4) / first.size
        assert freq == pytest.approx(softmax(scores), abs=0.015)

    def test_sample_is_seeded(self):
        """Mesmo gerador, mesmo rollout."""
        params = PolicyParams(np.array([[1.0, -1.0], [0.5, 0.5]]), np.array([0.2, -0.2]))
        ctx = make_context(NeedKind.max_interest())
        features = np.random.default_rng(0).normal(size=(4, 2))
        first = sample_rollout(params, ctx, np.random.default_rng(11), features)
        second = sample_rollout(params, ctx, np.random.default_rng(11), features)
        assert first.ranking == second.ranking
        assert first.strategy == second.strategy
        assert first.ranking.is_complete_for(ctx)
        logprobs, _ = evaluate_rollout(params, first, ctx)
        assert np.array_equal(logprobs, first.step_logprobs)

    def test_sample_from_feature_space(self, toy_embeddings, toy_topics):
        """Com o FeatureSpace as características são calculadas do próprio contexto."""
        space = FeatureSpace(toy_embeddings, toy_topics, projection_dim=2)
        ctx = make_context(NeedKind.niche_discovery(0.5))
        params = random_params(np.random.default_rng(2), 2, space.dim)
        from_space = sample_rollout(params, ctx, np.random.default_rng(4), space)
        from_matrix = sample_rollout(params, ctx, np.random.default_rng(4), space.context_features(ctx))
        assert from_space.ranking == from_matrix.ranking
        assert np.array_equal(from_space.step_logprobs, from_matrix.step_logprobs)
        assert np.array_equal(from_space.features_used, space.context_features(ctx))

    def test_feature_shape_mismatch(self, rng):
        """Características com D errado são rejeitadas."""
        with pytest.raises(PolicyError):
            sample_rollout(PolicyParams.zeros(1, 3), make_context(NeedKind.max_interest()), rng,
                           np.zeros((4, 2)))

    def test_greedy_ranking(self):
        """Melhor estratégia e scores decrescentes."""
        params = PolicyParams(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0.0, 1.0]))
        ctx = make_context(NeedKind.max_interest())
        features = np.array([[0.0, 0.1], [5.0, 0.4], [1.0, 0.3], [2.0, 0.2]])
        ranking, strategy = greedy_ranking(params, ctx, features)
        assert strategy == 1
        assert ranking.items == (2, 3, 4, 1)
        assert ranking.source_context == ctx.context_id

    def test_strategy_probabilities(self):
        """softmax dos logits de estratégia."""
        params = PolicyParams(np.zeros((2, 1)), np.array([0.0, np.log(3.0)]))
        assert strategy_probabilities(params) == pytest.approx([0.25, 0.75])


@pytest.mark.unit
class TestCheckpointAndOptimizer:
    """Testes de checkpoint e do otimizador."""

    def test_checkpoint_round_trip(self, rng, tmp_path):
        """Salvar e carregar preserva os parâmetros bit a bit."""
        params = random_params(rng, 3, 5)
        path = tmp_path / "policy.ckpt"
        save_policy(params, path)
        loaded = load_policy(path)
        assert np.array_equal(loaded.to_vector(), params.to_vector())
        assert loaded.temperature == params.temperature

    def test_bad_header(self, tmp_path):
        """Cabeçalho inválido gera DataFormatError."""
        path = tmp_path / "policy.ckpt"
        path.write_bytes(b"OUTRO 1 2 1.0\n")
        with pytest.raises(DataFormatError):
            load_policy(path)

    def test_truncated_body(self, rng, tmp_path):
        """Corpo truncado gera DataFormatError."""
        path = tmp_path / "policy.ckpt"
        save_policy(random_params(rng, 2, 2), path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DataFormatError):
            load_policy(path)

    def test_sgd_updates_params_in_place(self):
        """O passo do otimizador altera os arrays de PolicyParams."""
        params = PolicyParams.zeros(2, 3)
        optimizer = PolicyOptimizer(params, learning_rate=0.1, kind="sgd")
        gradient = PolicyGradient(np.ones((2, 3)), np.array([1.0, -1.0]))
        optimizer.step(gradient)
        assert params.score_weights == pytest.approx(np.full((2, 3), -0.1))
        assert params.strategy_logits == pytest.approx([-0.1, 0.1])

    def test_adam_moves_against_gradient(self):
        """Adam também desce na direção oposta ao gradiente."""
        params = PolicyParams.zeros(1, 2)
        optimizer = PolicyOptimizer(params, learning_rate=0.01)
        optimizer.step(PolicyGradient(np.array([[2.0, -3.0]]), np.array([0.0])))
        assert params.score_weights[0, 0] < 0 < params.score_weights[0, 1]

    def test_unknown_optimizer(self):
        """Tipo desconhecido é erro."""
        with pytest.raises(PolicyError):
            PolicyOptimizer(PolicyParams.zeros(1, 1), 0.1, kind="rmsprop")
