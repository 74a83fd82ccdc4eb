"""
Estruturas numéricas da política e dos grupos de rollouts.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .context import Context, Ranking
from .enums import RewardVariant


@dataclass
class PolicyParams:
    """Pesos por estratégia [S x D], logits de estratégia [S] e temperatura."""

    score_weights: np.ndarray
    strategy_logits: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        self.score_weights = np.asarray(self.score_weights, dtype=float)
        self.strategy_logits = np.asarray(self.strategy_logits, dtype=float)
        if self.score_weights.ndim != 2:
            raise ValueError("score_weights deve ser uma matriz [S x D]")
        if self.strategy_logits.shape != (self.score_weights.shape[0],):
            raise ValueError("strategy_logits deve ter comprimento S")
        if self.score_weights.shape[0] < 1:
            raise ValueError("S deve ser >= 1")
        if not self.temperature > 0:
            raise ValueError("temperatura deve ser positiva")

    @classmethod
    def zeros(cls, n_strategies: int, dim: int, temperature: float = 1.0) -> "PolicyParams":
        """Política uniforme (inicialização padrão)."""
        return cls(np.zeros((n_strategies, dim)), np.zeros(n_strategies), temperature)

    @property
    def n_strategies(self) -> int:
        return self.score_weights.shape[0]

    @property
    def dim(self) -> int:
        return self.score_weights.shape[1]

    @property
    def size(self) -> int:
        return self.strategy_logits.size + self.score_weights.size

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.score_weights.copy(), self.strategy_logits.copy(), self.temperature)

    def to_vector(self) -> np.ndarray:
        """Vetor plano: logits de estratégia seguidos dos pesos em ordem C."""
        return np.concatenate([self.strategy_logits, self.score_weights.ravel()])

    @classmethod
    def from_vector(cls, vector: np.ndarray, n_strategies: int, dim: int,
                    temperature: float) -> "PolicyParams":
        vector = np.asarray(vector, dtype=float)
        if vector.size != n_strategies * (dim + 1):
            raise ValueError("vetor de parâmetros com tamanho incompatível")
        return cls(vector[n_strategies:].reshape(n_strategies, dim).copy(),
                   vector[:n_strategies].copy(), temperature)


@dataclass
class PolicyGradient:
    """Gradiente em relação a PolicyParams (mesma forma dos parâmetros)."""

    score_weights: np.ndarray
    strategy_logits: np.ndarray

    @classmethod
    def zeros_like(cls, params: PolicyParams) -> "PolicyGradient":
        return cls(np.zeros_like(params.score_weights), np.zeros_like(params.strategy_logits))

    def add_(self, other: "PolicyGradient", scale: float = 1.0) -> "PolicyGradient":
        self.score_weights += scale * other.score_weights
        self.strategy_logits += scale * other.strategy_logits
        return self

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.strategy_logits, self.score_weights.ravel()])

    def norm(self) -> float:
        return float(np.linalg.norm(self.to_vector()))


@dataclass
class Rollout:
    """Um ranking amostrado com a escolha de estratégia e log-probs por passo."""

    strategy: int
    ranking: Ranking
    step_logprobs: np.ndarray          # K+1: passo de estratégia primeiro
    positions: np.ndarray              # índice de cada item ranqueado em ctx.candidates
    features_used: np.ndarray          # matriz [C x D] usada na amostragem
    step_entropies: Optional[np.ndarray] = None

    @property
    def n_steps(self) -> int:
        return self.step_logprobs.size


@dataclass(frozen=True)
class ItemRewardVector:
    """Recompensa por posição de um ranking."""

    per_rank: np.ndarray
    variant: RewardVariant

    def __len__(self) -> int:
        return self.per_rank.size


@dataclass
class RolloutGroup:
    """G rollouts de um mesmo contexto com recompensas e variâncias."""

    group_id: int
    context: Context
    rollouts: List[Rollout]
    ref_step_logprobs: np.ndarray                  # [G x (K+1)]
    item_rewards: np.ndarray                       # [G x K]
    seq_rewards: np.ndarray                        # [G]
    seq_variances: np.ndarray                      # [G]
    item_variances: Optional[np.ndarray] = None    # [G x K], variâncias de contribuição

    def __post_init__(self):
        g = len(self.rollouts)
        if any(r.ranking.source_context != self.context.context_id for r in self.rollouts):
            raise ValueError("todos os rollouts devem compartilhar o mesmo contexto")
        if self.item_rewards.shape[0] != g or self.seq_rewards.shape != (g,):
            raise ValueError("dimensões de recompensa incompatíveis com o grupo")
        if self.seq_variances.shape != (g,) or np.any(self.seq_variances < 0):
            raise ValueError("variâncias de sequência devem ser não negativas, uma por rollout")

    @property
    def size(self) -> int:
        return len(self.rollouts)

    @property
    def old_step_logprobs(self) -> np.ndarray:
        return np.stack([r.step_logprobs for r in self.rollouts])


@dataclass
class AdvantageAssignment:
    """Vantagens de item, de sequência, pesos de incerteza e atribuição por passo."""

    item_adv: np.ndarray           # [G x K]
    seq_adv: np.ndarray            # [G]
    weights: np.ndarray            # [G], c_i em (0, 1]
    weighted_seq_adv: np.ndarray   # [G], c_i * A_i
    step_advantages: np.ndarray = field(default=None)  # [G x (K+1)]
