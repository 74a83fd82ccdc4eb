"""
Serviço de rankings: operador de troca, objetivo listwise decomponível (NDCG@K)
e métricas de avaliação.
Posições são 1-based em toda a API pública.
"""

from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.errors import RankingError
from ..core.logging import get_logger
from ..core.metrics import record_invalid_items
from ..models import Context, GainMode, MetricReport, Ranking, RelevanceTable

logger = get_logger("ranking_service")

NDCG_CUTOFFS = (5, 10, 30)
TOP_CUTOFF = 5


def swap(y: Ranking, k: int, j: int) -> Ranking:
    """Troca as posições k e j (1-based, k < j) sem modificar a entrada."""
    n = len(y)
    if not (1 <= k <= n and 1 <= j <= n):
        raise RankingError(f"índice fora do intervalo: k={k}, j={j}, K={n}")
    if k >= j:
        raise RankingError(f"troca exige k < j (k={k}, j={j})")
    items = list(y.items)
    items[k - 1], items[j - 1] = items[j - 1], items[k - 1]
    return Ranking(items=tuple(items), source_context=y.source_context)


def transform_gains(gains: np.ndarray, gain_mode: GainMode = GainMode.LINEAR) -> np.ndarray:
    """Ganho usado dentro do DCG (linear ou 2^g - 1)."""
    gains = np.asarray(gains, dtype=float)
    if gain_mode == GainMode.EXPONENTIAL:
        return np.exp2(gains) - 1.0
    return gains


def discounts(length: int, cutoff: int) -> np.ndarray:
    """1/log2(k+1) para k <= cutoff, 0 depois."""
    ranks = np.arange(1, length + 1, dtype=float)
    d = 1.0 / np.log2(ranks + 1.0)
    d[ranks > cutoff] = 0.0
    return d


def ideal_dcg(gains: np.ndarray, cutoff: int, gain_mode: GainMode = GainMode.LINEAR) -> float:
    """IDCG@cutoff sobre o multiconjunto de ganhos."""
    ordered = np.sort(transform_gains(gains, gain_mode))[::-1]
    return float(np.dot(ordered, discounts(ordered.size, cutoff)))


def ndcg_from_gains(ranked_gains: np.ndarray, cutoff: int,
                    gain_mode: GainMode = GainMode.LINEAR,
                    idcg: Optional[float] = None) -> float:
    """NDCG@cutoff de ganhos já na ordem do ranking; 1.0 quando IDCG = 0."""
    ranked_gains = np.asarray(ranked_gains, dtype=float)
    if idcg is None:
        idcg = ideal_dcg(ranked_gains, cutoff, gain_mode)
    if idcg == 0.0:
        return 1.0
    dcg = float(np.dot(transform_gains(ranked_gains, gain_mode), discounts(ranked_gains.size, cutoff)))
    return dcg / idcg


def sequence_reward(y: Ranking, rel: RelevanceTable, K: int,
                    gain_mode: GainMode = GainMode.LINEAR) -> float:
    """R_n(y; x) = NDCG@K do ranking completo y."""
    if len(y) == 0:
        raise RankingError("ranking vazio")
    if not 1 <= K <= len(y):
        raise RankingError(f"cutoff K={K} deve estar em [1, {len(y)}]")
    return ndcg_from_gains(rel.vector(y.items), K, gain_mode)


def per_item_dcg(y: Ranking, rel: RelevanceTable, K: int,
                 gain_mode: GainMode = GainMode.LINEAR) -> np.ndarray:
    """Contribuição de cada posição para o NDCG (a soma é sequence_reward, exceto IDCG=0)."""
    gains = rel.vector(y.items)
    idcg = ideal_dcg(gains, K, gain_mode)
    if idcg == 0.0:
        return np.zeros(gains.size)
    return transform_gains(gains, gain_mode) * discounts(gains.size, K) / idcg


def relevance_threshold(rel: RelevanceTable, items: Sequence[int]) -> float:
    """Limiar padrão de relevância binária: mediana dos ganhos do contexto."""
    return float(np.median(rel.vector(items)))


def metrics(y: Ranking, rel: RelevanceTable, threshold: Optional[float] = None,
            n_invalid_items: int = 0, gain_mode: GainMode = GainMode.LINEAR) -> MetricReport:
    """NDCG@{5,10,30}, Recall@5, MRR@5 e Precision@5 de um ranking completo."""
    if len(y) < TOP_CUTOFF:
        raise RankingError(f"métricas exigem pelo menos {TOP_CUTOFF} candidatos (recebido {len(y)})")

    gains = rel.vector(y.items)
    ndcgs = {
        cutoff: ndcg_from_gains(gains, min(cutoff, gains.size), gain_mode)
        for cutoff in NDCG_CUTOFFS
    }

    if threshold is None:
        threshold = float(np.median(gains))
    relevant = gains > threshold
    n_relevant = int(relevant.sum())
    top = relevant[:TOP_CUTOFF]
    hits = int(top.sum())

    recall = hits / n_relevant if n_relevant else 0.0
    first_hit = np.flatnonzero(top)
    mrr = 1.0 / (first_hit[0] + 1) if first_hit.size else 0.0

    return MetricReport(
        context_id=y.source_context,
        ndcg5=ndcgs[5],
        ndcg10=ndcgs[10],
        ndcg30=ndcgs[30],
        recall5=recall,
        mrr5=mrr,
        precision5=hits / TOP_CUTOFF,
        n_invalid_items=n_invalid_items,
    )


def sanitize_partial(partial: Union[Ranking, Sequence[int]], ctx: Context) -> Tuple[List[int], int]:
    """Remove itens fora do conjunto de candidatos e duplicatas, contando os descartes."""
    items = partial.items if isinstance(partial, Ranking) else partial
    allowed = set(ctx.candidates)
    seen = set()
    valid: List[int] = []
    n_invalid = 0
    for item in items:
        if item in allowed and item not in seen:
            valid.append(item)
            seen.add(item)
        else:
            n_invalid += 1
    if n_invalid:
        logger.warning(f"Contexto {ctx.context_id}: {n_invalid} itens inválidos descartados")
        record_invalid_items(n_invalid)
    return valid, n_invalid


def pad_invalid(partial: Union[Ranking, Sequence[int]], ctx: Context,
                rng: np.random.Generator) -> Ranking:
    """
    Completa um ranking parcial com os candidatos restantes em ordem aleatória.
    O prefixo válido é preservado; o sufixo é uma permutação uniforme.
    """
    valid, _ = sanitize_partial(partial, ctx)
    chosen = set(valid)
    remaining = [item for item in ctx.candidates if item not in chosen]
    suffix = [remaining[i] for i in rng.permutation(len(remaining))] if remaining else []
    return Ranking(items=tuple(valid + suffix), source_context=ctx.context_id)
