"""
Ambiente sintético de recomendação.

Usuários e itens recebem vetores latentes unitários; o engajamento verdadeiro é
mu*(u, i) = 1 + tanh(escala * u.i), no intervalo (0, 2) como um watch ratio.
O sinal observado soma ruído gaussiano com desvio noise_base + noise_hetero * f(i),
onde f(i) = (1 + primeira coordenada latente do item) / 2.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, List, Sequence, Union

import numpy as np
import pandas as pd

from ..core.logging import get_logger
from ..models import EmbeddingTable, EsciLabel, InteractionLog, ONE_DAY_SECONDS, SignalKind
from ..schemas import SyntheticSpec

logger = get_logger("synthetic_service")

# Limiares de mu* para rótulos ESCI sintéticos
ESCI_THRESHOLDS = ((1.6, EsciLabel.EXACT), (1.2, EsciLabel.SUBSTITUTE), (0.8, EsciLabel.COMPLEMENT))


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    return matrix / np.linalg.norm(matrix, axis=1, keepdims=True)


@dataclass
class GroundTruthModel:
    """Preferências verdadeiras e sinal denso (com ruído) de todos os pares."""

    user_latents: np.ndarray    # [U x d]
    item_latents: np.ndarray    # [I x d]
    mu_star: np.ndarray         # [U x I]
    noise_std: np.ndarray       # [I]
    signal: np.ndarray          # [U x I], mu* + ruído, truncado em 0

    @property
    def n_users(self) -> int:
        return self.mu_star.shape[0]

    @property
    def n_items(self) -> int:
        return self.mu_star.shape[1]

    def hetero_feature(self) -> np.ndarray:
        """f(i) em [0, 1], a característica que governa o ruído."""
        return (1.0 + self.item_latents[:, 0]) / 2.0

    def signals_for(self, user_id: int, items: Sequence[int]) -> Dict[int, float]:
        row = self.signal[user_id]
        return {int(item): float(row[item]) for item in items}

    def expected_for(self, user_id: int, items: Sequence[int]) -> Dict[int, float]:
        row = self.mu_star[user_id]
        return {int(item): float(row[item]) for item in items}

    def esci_labels_for(self, user_id: int, items: Sequence[int]) -> Dict[int, EsciLabel]:
        """Rótulos graduados derivados de mu* para a necessidade de busca de produtos."""
        labels = {}
        for item in items:
            mu = self.mu_star[user_id, item]
            labels[int(item)] = next(
                (label for threshold, label in ESCI_THRESHOLDS if mu > threshold),
                EsciLabel.IRRELEVANT,
            )
        return labels

    def save(self, path: Union[str, Path]):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("wb") as handle:
            np.savez(handle, user_latents=self.user_latents, item_latents=self.item_latents,
                     mu_star=self.mu_star, noise_std=self.noise_std, signal=self.signal)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "GroundTruthModel":
        with np.load(Path(path)) as data:
            return cls(**{key: data[key] for key in
                          ("user_latents", "item_latents", "mu_star", "noise_std", "signal")})


@dataclass
class SyntheticDataset:
    log: InteractionLog
    embeddings: EmbeddingTable
    topics: Dict[int, FrozenSet[str]]
    truth: GroundTruthModel


def generate_synthetic(spec: SyntheticSpec, seed: int) -> SyntheticDataset:
    """Gera log, embeddings, tópicos e o modelo verdadeiro; função pura de (spec, seed)."""
    latent_ss, noise_ss, mask_ss, time_ss, topic_ss, emb_ss = np.random.SeedSequence(seed).spawn(6)
    n_users, n_items, dim = spec.n_users, spec.n_items, spec.latent_dim

    latent_rng = np.random.default_rng(latent_ss)
    user_latents = _unit_rows(latent_rng.standard_normal((n_users, dim)))
    item_latents = _unit_rows(latent_rng.standard_normal((n_items, dim)))
    mu_star = 1.0 + np.tanh(spec.affinity_scale * user_latents @ item_latents.T)

    hetero = (1.0 + item_latents[:, 0]) / 2.0
    noise_std = spec.noise_base + spec.noise_hetero * hetero
    noise = np.random.default_rng(noise_ss).standard_normal((n_users, n_items))
    signal = np.maximum(mu_star + noise_std[None, :] * noise, 0.0)

    # Cada usuário observa a mesma quantidade de itens
    n_observed = max(1, int(round(spec.sparsity * n_items)))
    mask_rng = np.random.default_rng(mask_ss)
    time_rng = np.random.default_rng(time_ss)
    horizon = spec.horizon_days * ONE_DAY_SECONDS

    users: List[np.ndarray] = []
    items: List[np.ndarray] = []
    stamps: List[np.ndarray] = []
    for user in range(n_users):
        observed = np.sort(mask_rng.permutation(n_items)[:n_observed])
        users.append(np.full(n_observed, user, dtype=np.int64))
        items.append(observed)
        stamps.append(time_rng.integers(0, horizon, size=n_observed, dtype=np.int64))

    user_col = np.concatenate(users)
    item_col = np.concatenate(items).astype(np.int64)
    frame = pd.DataFrame({
        "user_id": user_col,
        "item_id": item_col,
        "timestamp": np.concatenate(stamps),
        "signal_kind": SignalKind.WATCH_RATIO.value,
        "signal_value": signal[user_col, item_col],
    })
    frame = frame.sort_values(["user_id", "timestamp", "item_id"], kind="mergesort")

    centroids = _unit_rows(np.random.default_rng(topic_ss).standard_normal((spec.n_topics, dim)))
    assignment = np.argmax(item_latents @ centroids.T, axis=1)
    topics = {item: frozenset({f"t{assignment[item]}"}) for item in range(n_items)}

    exported = item_latents + spec.embedding_noise * np.random.default_rng(emb_ss).standard_normal(
        (n_items, dim))
    embeddings = EmbeddingTable(dim=dim, item_ids=np.arange(n_items), matrix=exported)

    truth = GroundTruthModel(user_latents=user_latents, item_latents=item_latents,
                             mu_star=mu_star, noise_std=noise_std, signal=signal)
    logger.info(
        f"Ambiente sintético gerado: {n_users} usuários, {n_items} itens, "
        f"{len(frame)} interações ({n_observed} por usuário)"
    )
    return SyntheticDataset(log=InteractionLog(frame), embeddings=embeddings, topics=topics,
                            truth=truth)
