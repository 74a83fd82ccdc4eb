"""
Filtragem colaborativa por vizinhos (user-KNN e item-KNN) usada como
alternativa ao crítico para imputar recompensas não observadas.
"""

from typing import Dict, Sequence, Tuple

import numpy as np
from scipy import sparse

from ..core.logging import get_logger
from ..models import CFMode, Context, InteractionLog

logger = get_logger("knn_service")


class KNNImputer:
    """Matriz usuário x item esparsa com similaridade de cosseno."""

    def __init__(self, log: InteractionLog, mode: CFMode = CFMode.USER_KNN, k_neighbors: int = 20):
        if k_neighbors < 1:
            raise ValueError("k_neighbors deve ser >= 1")
        self.mode = CFMode(mode)
        self.k_neighbors = k_neighbors

        # Interações repetidas do mesmo par contam pela média
        pairs = log.frame.groupby(["user_id", "item_id"], sort=True)["signal_value"].mean()
        self.user_ids = np.array(sorted({int(u) for u, _ in pairs.index}), dtype=np.int64)
        self.item_ids = np.array(sorted({int(i) for _, i in pairs.index}), dtype=np.int64)
        self._user_index: Dict[int, int] = {int(u): r for r, u in enumerate(self.user_ids)}
        self._item_index: Dict[int, int] = {int(i): c for c, i in enumerate(self.item_ids)}

        rows = np.array([self._user_index[int(u)] for u, _ in pairs.index], dtype=np.int64)
        cols = np.array([self._item_index[int(i)] for _, i in pairs.index], dtype=np.int64)
        self.matrix = sparse.csr_matrix(
            (pairs.to_numpy(dtype=float), (rows, cols)),
            shape=(len(self.user_ids), len(self.item_ids)),
        )
        self.by_item = self.matrix.T.tocsr()
        self.global_mean = float(pairs.mean()) if len(pairs) else 0.0
        logger.debug(f"KNN {self.mode.value}: matriz {self.matrix.shape}, {self.matrix.nnz} observações")

    def _user_vector(self, ctx: Context) -> np.ndarray:
        """Linha densa do usuário do contexto, só com o histórico (antes da consulta)."""
        vector = np.zeros(len(self.item_ids))
        for entry in ctx.history:
            col = self._item_index.get(entry.item_id)
            if col is not None:
                vector[col] = entry.signal
        return vector

    @staticmethod
    def _weighted_average(similarities: np.ndarray, values: np.ndarray, k: int) -> Tuple[float, bool]:
        keep = similarities > 0
        if not keep.any():
            return 0.0, False
        similarities, values = similarities[keep], values[keep]
        # Empates resolvidos pela ordem do índice
        top = np.argsort(-similarities, kind="stable")[:k]
        return float(similarities[top] @ values[top] / similarities[top].sum()), True

    def predict(self, ctx: Context, item: int) -> float:
        """Média ponderada por cosseno dos k vizinhos; média global quando não há vizinhos."""
        col = self._item_index.get(int(item))
        user_vector = self._user_vector(ctx)
        if col is None or not user_vector.any():
            return self.global_mean

        if self.mode == CFMode.USER_KNN:
            raters = self.by_item.getrow(col)
            neighbor_rows = raters.indices
            own = self._user_index.get(ctx.user_id)
            if own is not None:
                neighbor_rows = neighbor_rows[neighbor_rows != own]
            if neighbor_rows.size == 0:
                return self.global_mean
            neighbors = self.matrix[neighbor_rows]
            norms = np.sqrt(np.asarray(neighbors.multiply(neighbors).sum(axis=1)).ravel())
            with np.errstate(divide="ignore", invalid="ignore"):
                sims = np.where(norms > 0, (neighbors @ user_vector) / (norms * np.linalg.norm(user_vector)),
                                0.0)
            values = np.asarray(self.matrix[neighbor_rows, col].todense()).ravel()
        else:
            rated = np.flatnonzero(user_vector)
            rated = rated[rated != col]
            if rated.size == 0:
                return self.global_mean
            target = self.by_item.getrow(col)
            columns = self.by_item[rated]
            squared = np.asarray(columns.multiply(columns).sum(axis=1)).ravel()
            target_squared = float(target.multiply(target).sum())
            dots = np.asarray((columns @ target.T).todense()).ravel()
            own = self._user_index.get(ctx.user_id)
            if own is not None:
                # Similaridades entre itens sem a linha do próprio usuário
                own_row = self.matrix.getrow(own).toarray().ravel()
                squared = squared - own_row[rated] ** 2
                target_squared -= own_row[col] ** 2
                dots = dots - own_row[rated] * own_row[col]
            norms = np.sqrt(np.maximum(squared, 0.0))
            target_norm = np.sqrt(max(target_squared, 0.0))
            if target_norm <= 1e-12:
                return self.global_mean
            with np.errstate(divide="ignore", invalid="ignore"):
                sims = np.where(norms > 1e-12, dots / (norms * target_norm), 0.0)
            values = user_vector[rated]

        prediction, found = self._weighted_average(np.asarray(sims).ravel(), values, self.k_neighbors)
        return prediction if found else self.global_mean

    def predict_many(self, ctx: Context, items: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        """Previsões com variância zero (CF não estima incerteza)."""
        means = np.array([self.predict(ctx, item) for item in items], dtype=float)
        return means, np.zeros(len(means))


def knn_cf_impute(interactions: InteractionLog, ctx: Context, item: int,
                  mode: CFMode = CFMode.USER_KNN, k_neighbors: int = 20) -> float:
    """Previsão KNN isolada para um item do contexto."""
    return KNNImputer(interactions, mode, k_neighbors).predict(ctx, item)
