"""
Serviço de necessidades: construção das tabelas de relevância específicas
de cada necessidade a partir de sinais de interação, embeddings e tópicos.
"""

import math
from typing import Dict, FrozenSet, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from ..core.logging import get_logger
from ..models import (
    Context,
    EmbeddingTable,
    EsciLabel,
    InteractionLog,
    NeedKind,
    NeedVariant,
    ONE_DAY_SECONDS,
    RelevanceTable,
    SignalKind,
)

logger = get_logger("needs_service")

ESCI_GAINS = {
    EsciLabel.EXACT: 1.0,
    EsciLabel.SUBSTITUTE: 0.1,
    EsciLabel.COMPLEMENT: 0.01,
    EsciLabel.IRRELEVANT: 0.0,
}


def interest_gain(signal_kind: SignalKind, value: float) -> float:
    """Watch ratio é usado diretamente; rating r vira 2^r - 1."""
    if signal_kind == SignalKind.WATCH_RATIO:
        if value < 0 or not math.isfinite(value):
            raise ValueError(f"watch ratio deve ser finito e não negativo: {value}")
        return float(value)
    if value not in (1, 2, 3, 4, 5):
        raise ValueError(f"rating deve estar em 1..5: {value}")
    return float(2 ** int(value) - 1)


def niche_label(item_topics: Optional[Iterable[str]], history_topics: Iterable[str]) -> bool:
    """Nicho: item com tópicos válidos, nenhum presente no histórico."""
    if not item_topics:
        return False
    return set(item_topics).isdisjoint(set(history_topics))


def niche_gain(base_score: float, is_niche: bool, alpha_bonus: float) -> float:
    """Bônus multiplicativo score * (1 + alpha) para itens de nicho."""
    if base_score < 0:
        raise ValueError("score base deve ser não negativo")
    return base_score * (1.0 + alpha_bonus) if is_niche else base_score


def trend_gain(sim_norm: float, trend_norm: float, alpha_blend: float) -> float:
    """Combinação convexa alpha * sim + (1 - alpha) * trend."""
    return alpha_blend * sim_norm + (1.0 - alpha_blend) * trend_norm


def minmax_normalize(values: Sequence[float]) -> np.ndarray:
    """(v - min) / (max - min); lista constante vira zeros."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return values
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


class TrendIndex:
    """Timestamps ordenados por item para contagens em janela deslizante."""

    def __init__(self, log: InteractionLog):
        self._timestamps: Dict[int, np.ndarray] = {}
        if len(log):
            frame = log.frame.sort_values(["item_id", "timestamp"], kind="mergesort")
            for item, group in frame.groupby("item_id", sort=True):
                self._timestamps[int(item)] = group["timestamp"].to_numpy(dtype=np.int64)

    def count(self, item: int, query_time: int, window_seconds: int) -> int:
        """Interações com o item em (query_time - window, query_time]."""
        ts = self._timestamps.get(int(item))
        if ts is None:
            return 0
        hi = np.searchsorted(ts, query_time, side="right")
        lo = np.searchsorted(ts, query_time - window_seconds, side="right")
        return int(hi - lo)


def trend_count(interactions: Union[InteractionLog, TrendIndex], item: int, query_time: int,
                window_seconds: int = ONE_DAY_SECONDS) -> int:
    """Número de interações com o item na janela semiaberta anterior à consulta."""
    index = interactions if isinstance(interactions, TrendIndex) else TrendIndex(interactions)
    return index.count(item, query_time, window_seconds)


def esci_gain(label: Union[EsciLabel, str]) -> float:
    """Mapeamento graduado E/S/C/I -> 1.0/0.1/0.01/0.0."""
    return ESCI_GAINS[EsciLabel(label)]


def candidate_similarities(ctx: Context, embeddings: EmbeddingTable,
                           query: Optional[np.ndarray] = None) -> np.ndarray:
    """Cosseno entre a consulta do histórico e cada candidato."""
    from .data_service import query_embedding

    if query is None:
        query = query_embedding(ctx.history, embeddings)
    return embeddings.vectors(ctx.candidates) @ query


def build_relevance(ctx: Context, need: NeedKind,
                    signals: Optional[Mapping[int, float]] = None,
                    embeddings: Optional[EmbeddingTable] = None,
                    interactions: Optional[Union[InteractionLog, TrendIndex]] = None,
                    topics: Optional[Mapping[int, FrozenSet[str]]] = None,
                    esci_labels: Optional[Mapping[int, Union[EsciLabel, str]]] = None,
                    signal_kind: SignalKind = SignalKind.WATCH_RATIO,
                    query: Optional[np.ndarray] = None) -> RelevanceTable:
    """Tabela de relevância de um contexto para a necessidade informada."""
    candidates = ctx.candidates

    if need.variant == NeedVariant.MAX_INTEREST:
        if signals is None:
            raise ValueError("max_interest exige sinais de interação")
        gains = {}
        for item in candidates:
            value = signals.get(item)
            gains[item] = 0.0 if value is None else interest_gain(signal_kind, value)
        return RelevanceTable(gains=gains)

    if need.variant == NeedVariant.NICHE_DISCOVERY:
        if embeddings is None or topics is None:
            raise ValueError("niche_discovery exige embeddings e tópicos")
        sims = candidate_similarities(ctx, embeddings, query)
        history_topics = set()
        for item in ctx.history_items:
            history_topics |= set(topics.get(item, ()))
        gains = {
            item: niche_gain(max(float(sim), 0.0), niche_label(topics.get(item), history_topics),
                             need.alpha_bonus)
            for item, sim in zip(candidates, sims)
        }
        return RelevanceTable(gains=gains)

    if need.variant == NeedVariant.TREND_PROMOTION:
        if embeddings is None or interactions is None:
            raise ValueError("trend_promotion exige embeddings e interações")
        index = interactions if isinstance(interactions, TrendIndex) else TrendIndex(interactions)
        sims = minmax_normalize(candidate_similarities(ctx, embeddings, query))
        counts = minmax_normalize([
            index.count(item, ctx.query_time, need.window_seconds) for item in candidates
        ])
        gains = {
            item: trend_gain(float(s), float(t), need.alpha_blend)
            for item, s, t in zip(candidates, sims, counts)
        }
        return RelevanceTable(gains=gains)

    if esci_labels is None:
        raise ValueError("product_search exige rótulos ESCI")
    gains = {
        item: esci_gain(esci_labels.get(item, EsciLabel.IRRELEVANT)) for item in candidates
    }
    return RelevanceTable(gains=gains)
