"""
Modelo de necessidade (need) e os textos de instrução associados.
"""

from typing import Optional

import numpy as np
from pydantic import Field, model_validator

from .base import FrozenModel
from .enums import NeedVariant

ONE_DAY_SECONDS = 86_400

# Instruções de necessidade guardadas como metadado do contexto
NEED_INSTRUCTIONS = {
    NeedVariant.MAX_INTEREST: (
        "Ordene os candidatos pelo interesse esperado do usuário, estimado a partir do "
        "histórico: itens mais propensos a serem consumidos até o fim vêm primeiro."
    ),
    NeedVariant.NICHE_DISCOVERY: (
        "Ordene pelo interesse do usuário, mas favoreça itens de tópicos que ele ainda não "
        "consumiu, desde que continuem plausivelmente relevantes."
    ),
    NeedVariant.TREND_PROMOTION: (
        "Ordene pelo interesse do usuário, mas favoreça itens com muitas interações recentes "
        "na janela de tendência, desde que continuem relevantes."
    ),
    NeedVariant.PRODUCT_SEARCH: (
        "Ordene os produtos pela aderência à consulta: correspondências exatas primeiro, "
        "substitutos em seguida, complementos e itens irrelevantes por último."
    ),
}


class NeedKind(FrozenModel):
    """Necessidade explícita que define a função de relevância de um contexto."""

    variant: NeedVariant
    alpha_bonus: Optional[float] = Field(None, gt=0)
    alpha_blend: Optional[float] = Field(None, gt=0, lt=1)
    window_seconds: Optional[int] = Field(None, gt=0)

    @model_validator(mode="after")
    def _check_parameters(self) -> "NeedKind":
        if self.variant == NeedVariant.NICHE_DISCOVERY and self.alpha_bonus is None:
            raise ValueError("niche_discovery exige alpha_bonus")
        if self.variant == NeedVariant.TREND_PROMOTION:
            if self.alpha_blend is None or self.window_seconds is None:
                raise ValueError("trend_promotion exige alpha_blend e window_seconds")
        return self

    @classmethod
    def max_interest(cls) -> "NeedKind":
        return cls(variant=NeedVariant.MAX_INTEREST)

    @classmethod
    def niche_discovery(cls, alpha_bonus: float = 0.5) -> "NeedKind":
        return cls(variant=NeedVariant.NICHE_DISCOVERY, alpha_bonus=alpha_bonus)

    @classmethod
    def trend_promotion(cls, alpha_blend: float = 0.7,
                        window_seconds: int = ONE_DAY_SECONDS) -> "NeedKind":
        return cls(variant=NeedVariant.TREND_PROMOTION, alpha_blend=alpha_blend,
                   window_seconds=window_seconds)

    @classmethod
    def product_search(cls) -> "NeedKind":
        return cls(variant=NeedVariant.PRODUCT_SEARCH)

    @property
    def tag(self) -> str:
        return self.variant.value

    @property
    def instruction(self) -> str:
        return NEED_INSTRUCTIONS[self.variant]

    def one_hot(self) -> np.ndarray:
        """Vetor one-hot na ordem de NeedVariant.ordered()."""
        vec = np.zeros(len(NeedVariant.ordered()))
        vec[NeedVariant.ordered().index(self.variant)] = 1.0
        return vec
