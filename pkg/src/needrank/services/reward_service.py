"""
Serviço de recompensas por item.
Recompensa causal por troca contrafactual, as duas variantes de ablação
(troca não causal e contribuição independente) e variâncias de contribuição.

A avaliação das trocas usa atualização incremental do DCG: trocar as posições
k e j altera apenas dois termos, então Δ_{k,j} = (g_j - g_k)(d_k - d_j) / IDCG.
"""

from typing import Optional

import numpy as np

from ..core.errors import RankingError
from ..core.logging import get_logger
from ..core.metrics import record_swap_evaluations
from ..models import GainMode, ItemRewardVector, Ranking, RelevanceTable, RewardVariant
from .ranking_service import discounts, ideal_dcg, per_item_dcg, transform_gains

logger = get_logger("reward_service")


def _check_cutoff(y: Ranking, K_cut: int):
    if len(y) == 0:
        raise RankingError("ranking vazio")
    if not 1 <= K_cut <= len(y):
        raise RankingError(f"cutoff K={K_cut} deve estar em [1, {len(y)}]")


def swap_delta_matrix(ranked_gains: np.ndarray, K_cut: int,
                      gain_mode: GainMode = GainMode.LINEAR,
                      idcg: Optional[float] = None) -> np.ndarray:
    """
    Matriz simétrica [K x K] com D[k, j] = R(y^(k<->j)) - R(y) (índices 0-based).
    IDCG = 0 implica NDCG constante igual a 1, logo todas as diferenças são 0.
    """
    ranked_gains = np.asarray(ranked_gains, dtype=float)
    if idcg is None:
        idcg = ideal_dcg(ranked_gains, K_cut, gain_mode)
    n = ranked_gains.size
    if idcg == 0.0:
        return np.zeros((n, n))
    g = transform_gains(ranked_gains, gain_mode)
    d = discounts(n, K_cut)
    return (g[None, :] - g[:, None]) * (d[:, None] - d[None, :]) / idcg


def delta_swap(y: Ranking, rel: RelevanceTable, k: int, j: int, K_cut: int,
               gain_mode: GainMode = GainMode.LINEAR) -> float:
    """Δ_{k,j}(y; x) = R_n(y^(k<->j)) - R_n(y), posições 1-based com k < j."""
    _check_cutoff(y, K_cut)
    n = len(y)
    if not (1 <= k <= n and 1 <= j <= n):
        raise RankingError(f"índice fora do intervalo: k={k}, j={j}, K={n}")
    if k >= j:
        raise RankingError(f"troca exige k < j (k={k}, j={j})")

    gains = rel.vector(y.items)
    idcg = ideal_dcg(gains, K_cut, gain_mode)
    if idcg == 0.0:
        return 0.0
    g = transform_gains(gains, gain_mode)
    d = discounts(n, K_cut)
    return float((g[j - 1] - g[k - 1]) * (d[k - 1] - d[j - 1]) / idcg)


def causal_swap_from_gains(ranked_gains: np.ndarray, K_cut: int,
                           gain_mode: GainMode = GainMode.LINEAR) -> np.ndarray:
    """Recompensa causal por posição a partir dos ganhos na ordem do ranking."""
    n = ranked_gains.size
    deltas = swap_delta_matrix(ranked_gains, K_cut, gain_mode)
    record_swap_evaluations(RewardVariant.CAUSAL_SWAP.value, n * (n - 1) // 2)

    rewards = np.zeros(n)
    if n > 1:
        # Só posições posteriores (ainda disponíveis no passo k)
        later = np.triu(deltas, k=1).sum(axis=1)[:-1]
        remaining = np.arange(n - 1, 0, -1, dtype=float)
        rewards[:-1] = -later / remaining
    # r_K := 0, não há contrafactual no último passo
    return rewards


def causal_swap_reward(y: Ranking, rel: RelevanceTable, K_cut: int,
                       gain_mode: GainMode = GainMode.LINEAR) -> ItemRewardVector:
    """r_k = -(1/(K-k)) Σ_{j=k+1..K} Δ_{k,j}; r_K = 0."""
    _check_cutoff(y, K_cut)
    per_rank = causal_swap_from_gains(rel.vector(y.items), K_cut, gain_mode)
    return ItemRewardVector(per_rank=per_rank, variant=RewardVariant.CAUSAL_SWAP)


def noncausal_swap_from_gains(ranked_gains: np.ndarray, K_cut: int,
                              gain_mode: GainMode = GainMode.LINEAR) -> np.ndarray:
    n = ranked_gains.size
    if n == 1:
        return np.zeros(1)
    deltas = swap_delta_matrix(ranked_gains, K_cut, gain_mode)
    record_swap_evaluations(RewardVariant.NONCAUSAL_SWAP.value, n * (n - 1) // 2)
    # Diagonal é zero: a média cobre todas as outras posições, passadas e futuras
    return -deltas.sum(axis=1) / (n - 1)


def noncausal_swap_reward(y: Ranking, rel: RelevanceTable, K_cut: int,
                          gain_mode: GainMode = GainMode.LINEAR) -> ItemRewardVector:
    """r_k = -(1/(K-1)) Σ_{j≠k} Δ_{k,j}, incluindo posições j < k."""
    _check_cutoff(y, K_cut)
    per_rank = noncausal_swap_from_gains(rel.vector(y.items), K_cut, gain_mode)
    return ItemRewardVector(per_rank=per_rank, variant=RewardVariant.NONCAUSAL_SWAP)


def independent_contribution_reward(y: Ranking, rel: RelevanceTable, K_cut: int,
                                    gain_mode: GainMode = GainMode.LINEAR) -> ItemRewardVector:
    """Contribuição de NDCG de cada item: g(a_k)/log2(k+1)/IDCG para k <= K_cut."""
    _check_cutoff(y, K_cut)
    return ItemRewardVector(
        per_rank=per_item_dcg(y, rel, K_cut, gain_mode),
        variant=RewardVariant.INDEPENDENT_CONTRIBUTION,
    )


def item_rewards_from_gains(variant: RewardVariant, ranked_gains: np.ndarray, K_cut: int,
                            gain_mode: GainMode = GainMode.LINEAR) -> np.ndarray:
    """Despacho por variante usado no laço de treino (ganhos já ordenados)."""
    ranked_gains = np.asarray(ranked_gains, dtype=float)
    if variant == RewardVariant.CAUSAL_SWAP:
        return causal_swap_from_gains(ranked_gains, K_cut, gain_mode)
    if variant == RewardVariant.NONCAUSAL_SWAP:
        return noncausal_swap_from_gains(ranked_gains, K_cut, gain_mode)
    idcg = ideal_dcg(ranked_gains, K_cut, gain_mode)
    if idcg == 0.0:
        return np.zeros(ranked_gains.size)
    return transform_gains(ranked_gains, gain_mode) * discounts(ranked_gains.size, K_cut) / idcg


def item_rewards(variant: RewardVariant, y: Ranking, rel: RelevanceTable, K_cut: int,
                 gain_mode: GainMode = GainMode.LINEAR) -> ItemRewardVector:
    _check_cutoff(y, K_cut)
    per_rank = item_rewards_from_gains(variant, rel.vector(y.items), K_cut, gain_mode)
    return ItemRewardVector(per_rank=per_rank, variant=variant)


def contribution_variances(ranked_means: np.ndarray, ranked_gain_vars: np.ndarray, K_cut: int,
                           gain_mode: GainMode = GainMode.LINEAR) -> np.ndarray:
    """
    Variância da contribuição de cada posição para o NDCG:
    Var[g_k] * (d_k / IDCG)^2, com IDCG calculado sobre as médias.
    No modo exponencial usa o método delta: Var[2^g - 1] ≈ (ln 2 · 2^μ)^2 Var[g].
    """
    ranked_means = np.asarray(ranked_means, dtype=float)
    ranked_gain_vars = np.asarray(ranked_gain_vars, dtype=float)
    if np.any(ranked_gain_vars < 0):
        raise ValueError("variâncias devem ser não negativas")
    idcg = ideal_dcg(ranked_means, K_cut, gain_mode)
    if idcg == 0.0:
        return np.zeros(ranked_means.size)
    if gain_mode == GainMode.EXPONENTIAL:
        ranked_gain_vars = (np.log(2.0) * np.exp2(ranked_means)) ** 2 * ranked_gain_vars
    scale = discounts(ranked_means.size, K_cut) / idcg
    return ranked_gain_vars * scale ** 2
