"""
Enums e constantes de domínio para o needrank.
Define necessidades, variantes de recompensa, modos de vantagem e presets.
"""

import enum
from typing import List


class NeedVariant(str, enum.Enum):
    """Enumeração das necessidades suportadas."""

    MAX_INTEREST = "max_interest"          # Maximizar interesse (watch ratio / rating)
    NICHE_DISCOVERY = "niche_discovery"    # Descoberta de tópicos novos
    TREND_PROMOTION = "trend_promotion"    # Promoção de itens em alta
    PRODUCT_SEARCH = "product_search"      # Busca de produtos (ESCI)

    @classmethod
    def ordered(cls) -> List['NeedVariant']:
        """Ordem fixa usada no one-hot de necessidade."""
        return [cls.MAX_INTEREST, cls.NICHE_DISCOVERY, cls.TREND_PROMOTION, cls.PRODUCT_SEARCH]


class SignalKind(str, enum.Enum):
    """Tipo de sinal de interação em um log."""

    WATCH_RATIO = "watch_ratio"
    RATING = "rating"


class EsciLabel(str, enum.Enum):
    """Rótulos de relevância do ESCI."""

    EXACT = "E"
    SUBSTITUTE = "S"
    COMPLEMENT = "C"
    IRRELEVANT = "I"


class GainMode(str, enum.Enum):
    """Convenção de ganho dentro do DCG."""

    LINEAR = "linear"            # g / log2(k+1)
    EXPONENTIAL = "exponential"  # (2^g - 1) / log2(k+1)


class RewardVariant(str, enum.Enum):
    """Variantes de recompensa por item."""

    CAUSAL_SWAP = "causal_swap"
    NONCAUSAL_SWAP = "noncausal_swap"
    INDEPENDENT_CONTRIBUTION = "independent_contribution"


class AdvantageMode(str, enum.Enum):
    """Granularidade da atribuição de vantagens."""

    ITEM_LEVEL = "item_level"
    SEQUENCE_LEVEL = "sequence_level"


class RewardSource(str, enum.Enum):
    """Origem das recompensas de treino."""

    GROUND_TRUTH = "ground_truth"
    CRITIC = "critic"
    USER_KNN = "user_knn"
    ITEM_KNN = "item_knn"

    @property
    def is_cf(self) -> bool:
        return self in (RewardSource.USER_KNN, RewardSource.ITEM_KNN)


class CFMode(str, enum.Enum):
    """Modo de filtragem colaborativa por vizinhos."""

    USER_KNN = "user_knn"
    ITEM_KNN = "item_knn"


class AblationPreset(str, enum.Enum):
    """Presets de ablação."""

    REWARD_VARIANT = "reward_variant"    # causal, não causal, independente
    UNCERTAINTY = "uncertainty"          # user-KNN, item-KNN, crítico bruto, crítico com incerteza
    ADVANTAGE_MODE = "advantage_mode"    # item vs sequência
