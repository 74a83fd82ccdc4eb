"""
Modelos de domínio do needrank.
Tipos imutáveis (pydantic) para registros e dataclasses numpy para estruturas numéricas.
"""

from .base import FrozenModel
from .enums import (
    AblationPreset,
    AdvantageMode,
    CFMode,
    EsciLabel,
    GainMode,
    NeedVariant,
    RewardSource,
    RewardVariant,
    SignalKind,
)
from .need import NeedKind, ONE_DAY_SECONDS
from .context import (
    Context,
    HistoryEntry,
    METRIC_REPORT_COLUMNS,
    MetricReport,
    Ranking,
    RelevanceTable,
)
from .interaction import EmbeddingTable, INTERACTION_COLUMNS, InteractionLog, InteractionRecord
from .rollout import (
    AdvantageAssignment,
    ItemRewardVector,
    PolicyGradient,
    PolicyParams,
    Rollout,
    RolloutGroup,
)
from .critic import CALIBRATION_COLUMNS, CalibrationReport, CriticPrediction

__all__ = [
    'FrozenModel',
    'AblationPreset', 'AdvantageMode', 'CFMode', 'EsciLabel', 'GainMode', 'NeedVariant',
    'RewardSource', 'RewardVariant', 'SignalKind',
    'NeedKind', 'ONE_DAY_SECONDS',
    'Context', 'HistoryEntry', 'METRIC_REPORT_COLUMNS', 'MetricReport', 'Ranking', 'RelevanceTable',
    'EmbeddingTable', 'INTERACTION_COLUMNS', 'InteractionLog', 'InteractionRecord',
    'AdvantageAssignment', 'ItemRewardVector', 'PolicyGradient', 'PolicyParams', 'Rollout',
    'RolloutGroup',
    'CALIBRATION_COLUMNS', 'CalibrationReport', 'CriticPrediction',
]
