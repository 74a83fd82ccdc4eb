"""
Modelos de log de interações e tabela de embeddings.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Sequence

import numpy as np
import pandas as pd
from pydantic import Field

from .base import FrozenModel
from .enums import SignalKind

INTERACTION_COLUMNS = ["user_id", "item_id", "timestamp", "signal_kind", "signal_value"]


class InteractionRecord(FrozenModel):
    """Uma linha do log de interações."""

    user_id: int
    item_id: int
    timestamp: int = Field(ge=0)
    signal_kind: SignalKind
    signal_value: float


@dataclass
class InteractionLog:
    """Log de feedback implícito/explícito; uma linha por interação."""

    frame: pd.DataFrame

    def __post_init__(self):
        missing = [c for c in INTERACTION_COLUMNS if c not in self.frame.columns]
        if missing:
            raise ValueError(f"colunas ausentes no log de interações: {missing}")
        self.frame = self.frame[INTERACTION_COLUMNS].reset_index(drop=True)
        if len(self.frame):
            if (self.frame["timestamp"] < 0).any():
                raise ValueError("timestamps devem ser não negativos")
            if self.frame["signal_kind"].nunique() > 1:
                raise ValueError("signal_kind deve ser uniforme dentro de um log")

    @classmethod
    def from_records(cls, records: Sequence[InteractionRecord]) -> "InteractionLog":
        rows = [
            {
                "user_id": r.user_id,
                "item_id": r.item_id,
                "timestamp": r.timestamp,
                "signal_kind": r.signal_kind.value,
                "signal_value": r.signal_value,
            }
            for r in records
        ]
        return cls(cls._typed(pd.DataFrame(rows, columns=INTERACTION_COLUMNS)))

    @staticmethod
    def _typed(frame: pd.DataFrame) -> pd.DataFrame:
        return frame.astype({
            "user_id": "int64",
            "item_id": "int64",
            "timestamp": "int64",
            "signal_kind": "object",
            "signal_value": "float64",
        })

    @classmethod
    def empty(cls) -> "InteractionLog":
        return cls(cls._typed(pd.DataFrame(columns=INTERACTION_COLUMNS)))

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def signal_kind(self) -> SignalKind:
        if not len(self.frame):
            return SignalKind.WATCH_RATIO
        return SignalKind(self.frame["signal_kind"].iloc[0])

    @property
    def users(self) -> List[int]:
        return sorted(int(u) for u in self.frame["user_id"].unique())

    @property
    def items(self) -> List[int]:
        return sorted(int(i) for i in self.frame["item_id"].unique())

    def records(self) -> Iterator[InteractionRecord]:
        for row in self.frame.itertuples(index=False):
            yield InteractionRecord(
                user_id=int(row.user_id),
                item_id=int(row.item_id),
                timestamp=int(row.timestamp),
                signal_kind=SignalKind(row.signal_kind),
                signal_value=float(row.signal_value),
            )

    def for_users(self, users: Sequence[int]) -> "InteractionLog":
        return InteractionLog(self.frame[self.frame["user_id"].isin(list(users))])

    def by_user(self) -> Dict[int, pd.DataFrame]:
        """Interações de cada usuário ordenadas por (timestamp, item_id)."""
        ordered = self.frame.sort_values(["user_id", "timestamp", "item_id"], kind="mergesort")
        return {int(u): g for u, g in ordered.groupby("user_id", sort=True)}


@dataclass
class EmbeddingTable:
    """Vetores de item com norma unitária, indexados por item_id."""

    dim: int
    item_ids: np.ndarray
    matrix: np.ndarray
    _index: Dict[int, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.item_ids = np.asarray(self.item_ids, dtype=np.int64)
        matrix = np.asarray(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[1] != self.dim:
            raise ValueError(f"embeddings devem ter dimensão {self.dim}")
        if matrix.shape[0] != len(self.item_ids):
            raise ValueError("número de vetores difere do número de itens")
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("embedding com norma zero não pode ser normalizado")
        # Linhas já unitárias ficam intactas para que salvar e recarregar seja exato
        rescale = np.abs(norms - 1.0) > 1e-12
        self.matrix = np.where(rescale, matrix / norms, matrix)
        self._index = {int(item): row for row, item in enumerate(self.item_ids)}
        if len(self._index) != len(self.item_ids):
            raise ValueError("item_id duplicado na tabela de embeddings")

    @classmethod
    def from_vectors(cls, vectors: Dict[int, Sequence[float]]) -> "EmbeddingTable":
        items = sorted(vectors)
        matrix = np.array([np.asarray(vectors[i], dtype=float) for i in items])
        return cls(dim=matrix.shape[1], item_ids=np.array(items), matrix=matrix)

    def __contains__(self, item: int) -> bool:
        return int(item) in self._index

    def __len__(self) -> int:
        return len(self.item_ids)

    def index_of(self, item: int) -> int:
        try:
            return self._index[int(item)]
        except KeyError:
            raise KeyError(f"embedding ausente para o item {item}") from None

    def vector(self, item: int) -> np.ndarray:
        return self.matrix[self.index_of(item)]

    def vectors(self, items: Sequence[int]) -> np.ndarray:
        return self.matrix[[self.index_of(i) for i in items]]
