"""
Modelos de contexto, tabela de relevância, ranking e relatório de métricas.
"""

import math
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
from pydantic import Field, field_validator, model_validator

from .base import FrozenModel
from .need import NeedKind


class HistoryEntry(FrozenModel):
    """Interação histórica (item, sinal, timestamp em segundos)."""

    item_id: int
    signal: float
    timestamp: int = Field(ge=0)


class Context(FrozenModel):
    """Prompt x=(U, C, M) mais a necessidade n."""

    context_id: str
    user_id: int
    history: Tuple[HistoryEntry, ...]
    candidates: Tuple[int, ...]
    need: NeedKind
    metadata: Dict[str, str] = Field(default_factory=dict)

    @field_validator("candidates")
    @classmethod
    def _distinct_candidates(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(set(v)) != len(v):
            raise ValueError("candidatos devem ser distintos")
        return v

    @model_validator(mode="after")
    def _check_history(self) -> "Context":
        timestamps = [h.timestamp for h in self.history]
        if timestamps != sorted(timestamps):
            raise ValueError("histórico deve estar ordenado por timestamp")
        overlap = set(self.candidates) & {h.item_id for h in self.history}
        if overlap:
            raise ValueError(f"candidatos não podem estar no histórico: {sorted(overlap)[:5]}")
        return self

    @property
    def query_time(self) -> int:
        """Instante da consulta: timestamp da interação mais recente."""
        return self.history[-1].timestamp if self.history else 0

    @property
    def history_items(self) -> List[int]:
        return [h.item_id for h in self.history]

    @property
    def size(self) -> int:
        return len(self.candidates)


class RelevanceTable(FrozenModel):
    """Ganho específico da necessidade r_n(a; x) por item candidato."""

    gains: Dict[int, float]

    @field_validator("gains")
    @classmethod
    def _finite_nonnegative(cls, v: Dict[int, float]) -> Dict[int, float]:
        for item, gain in v.items():
            if not math.isfinite(gain) or gain < 0:
                raise ValueError(f"ganho inválido para o item {item}: {gain}")
        return v

    def covers(self, ctx: Context) -> bool:
        return all(item in self.gains for item in ctx.candidates)

    def vector(self, items: Iterable[int]) -> np.ndarray:
        """Ganhos na ordem dos itens informados."""
        try:
            return np.array([self.gains[item] for item in items], dtype=float)
        except KeyError as e:
            raise KeyError(f"item sem ganho na tabela de relevância: {e.args[0]}") from None

    def to_lines(self) -> List[str]:
        """Linhas ordenadas `item_id<TAB>gain` com 17 dígitos significativos."""
        return [f"{item}\t{self.gains[item]:.17g}" for item in sorted(self.gains)]

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "RelevanceTable":
        gains = {}
        for line in lines:
            line = line.strip()
            if not line:
                continue
            item, gain = line.split("\t")
            gains[int(item)] = float(gain)
        return cls(gains=gains)


class Ranking(FrozenModel):
    """Permutação (possivelmente parcial) do conjunto de candidatos."""

    items: Tuple[int, ...]
    source_context: str

    @field_validator("items")
    @classmethod
    def _distinct_items(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(set(v)) != len(v):
            raise ValueError("itens do ranking devem ser distintos")
        return v

    def __len__(self) -> int:
        return len(self.items)

    def is_complete_for(self, ctx: Context) -> bool:
        return len(self.items) == ctx.size and set(self.items) == set(ctx.candidates)

    @classmethod
    def of(cls, items: Sequence[int], source_context: str = "") -> "Ranking":
        return cls(items=tuple(int(i) for i in items), source_context=source_context)


METRIC_REPORT_COLUMNS = [
    "context_id", "ndcg5", "ndcg10", "ndcg30", "recall5", "mrr5", "precision5", "n_invalid_items",
]


class MetricReport(FrozenModel):
    """Métricas de avaliação de um ranking completo."""

    context_id: str
    ndcg5: float
    ndcg10: float
    ndcg30: float
    recall5: float
    mrr5: float
    precision5: float
    n_invalid_items: int = 0

    def to_row(self) -> dict:
        return {column: getattr(self, column) for column in METRIC_REPORT_COLUMNS}
