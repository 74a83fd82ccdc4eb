"""
Modelos de saída do crítico heteroscedástico.
"""

import math

from pydantic import Field, field_validator

from .base import FrozenModel

CALIBRATION_COLUMNS = [
    "mse", "mae", "pearson_mean", "pearson_var", "epoch_best", "pearson_mean_p", "pearson_var_p",
]


class CriticPrediction(FrozenModel):
    """Média e variância estimadas da recompensa de interação de um item."""

    mean: float
    variance: float = Field(gt=0)

    @field_validator("mean")
    @classmethod
    def _finite_mean(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("média prevista não finita")
        return v


class CalibrationReport(FrozenModel):
    """Qualidade do crítico na validação."""

    mse: float
    mae: float
    pearson_mean: float
    pearson_var: float
    epoch_best: int
    pearson_mean_p: float = 1.0
    pearson_var_p: float = 1.0

    def to_row(self) -> dict:
        return {column: getattr(self, column) for column in CALIBRATION_COLUMNS}
