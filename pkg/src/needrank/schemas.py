"""
Esquemas de configuração de experimento.
Documento JSON aninhado; chaves desconhecidas são erro em todos os níveis.
"""

import json
from pathlib import Path
from typing import Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .core.errors import ConfigError
from .models import (
    AblationPreset,
    AdvantageMode,
    GainMode,
    NeedKind,
    NeedVariant,
    ONE_DAY_SECONDS,
    RewardSource,
    RewardVariant,
)


class StrictSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")


# Esquemas para dados

class SyntheticSpec(StrictSchema):
    """Ambiente sintético com fatores latentes e ruído heteroscedástico."""

    n_users: int = Field(500, ge=2)
    n_items: int = Field(200, ge=2)
    latent_dim: int = Field(8, ge=1)
    noise_base: float = Field(0.05, ge=0)
    noise_hetero: float = Field(0.3, ge=0)
    sparsity: float = Field(0.1, gt=0, le=1)
    affinity_scale: float = Field(3.0, gt=0)
    n_topics: int = Field(8, ge=1)
    embedding_noise: float = Field(0.05, ge=0)
    horizon_days: int = Field(30, ge=1)


class FileSourceSpec(StrictSchema):
    interactions: str
    embeddings: str
    topics: Optional[str] = None
    esci_labels: Optional[str] = None


class DataSpec(StrictSchema):
    synthetic: Optional[SyntheticSpec] = None
    files: Optional[FileSourceSpec] = None

    subsample_fraction: float = Field(1.0, gt=0, le=1)
    split_ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    history_window: int = Field(10, ge=1)
    n_candidates: int = Field(30, ge=2)
    discount: float = Field(0.9, gt=0, le=1)
    signal_weighting: bool = True
    # Fração final (cronológica) das interações de cada usuário fora do histórico
    holdout_fraction: float = Field(0.5, gt=0, lt=1)
    max_train_contexts: int = Field(5000, ge=1)
    max_eval_contexts: int = Field(1000, ge=1)

    @model_validator(mode="after")
    def _one_source(self) -> "DataSpec":
        if self.synthetic is not None and self.files is not None:
            raise ValueError("informe apenas uma fonte de dados: synthetic ou files")
        if self.synthetic is None and self.files is None:
            self.synthetic = SyntheticSpec()
        return self

    @field_validator("split_ratios")
    @classmethod
    def _ratios(cls, v: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any(r < 0 for r in v) or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError("split_ratios devem ser não negativas e somar 1")
        return v


# Esquemas para necessidade e política

class NeedSpec(StrictSchema):
    variant: NeedVariant = NeedVariant.MAX_INTEREST
    alpha_bonus: float = Field(0.5, gt=0)
    alpha_blend: float = Field(0.7, gt=0, lt=1)
    window_seconds: int = Field(ONE_DAY_SECONDS, gt=0)

    def to_need(self) -> NeedKind:
        if self.variant == NeedVariant.NICHE_DISCOVERY:
            return NeedKind.niche_discovery(self.alpha_bonus)
        if self.variant == NeedVariant.TREND_PROMOTION:
            return NeedKind.trend_promotion(self.alpha_blend, self.window_seconds)
        return NeedKind(variant=self.variant)


class PolicySpec(StrictSchema):
    n_strategies: int = Field(3, ge=1)
    projection_dim: int = Field(4, ge=0)
    temperature: float = Field(1.0, gt=0)

    @property
    def feature_dim(self) -> int:
        # cosseno, tendência, nicho, projeção, one-hot de necessidade
        return 3 + self.projection_dim + len(NeedVariant.ordered())


# Esquemas para treinamento

class TrainerSpec(StrictSchema):
    group_size: int = Field(8, ge=2)
    contexts_per_batch: int = Field(4, ge=1)
    clip_ratio: float = Field(0.2, gt=0)
    kl_coeff: float = Field(0.01, ge=0)
    entropy_coeff: float = Field(0.005, ge=0)
    steps: int = Field(500, ge=0)
    learning_rate: float = Field(1e-2, ge=0)
    optimizer: Literal["adam", "sgd"] = "adam"
    inner_epochs: int = Field(1, ge=1)
    ref_refresh_every: int = Field(0, ge=0)
    eval_every: int = Field(25, ge=1)
    gain_mode: GainMode = GainMode.LINEAR
    reward_cutoff: Optional[int] = Field(None, ge=1)
    adv_eps: float = Field(1e-8, gt=0)
    weight_eps: float = Field(1e-6, gt=0)
    per_item_uncertainty: bool = False


class CriticSpec(StrictSchema):
    hidden_dim: int = Field(256, ge=1)
    dropout: float = Field(0.05, ge=0, lt=1)
    beta: float = Field(1.0, ge=0)
    learning_rate: float = Field(1e-3, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    epochs: int = Field(30, ge=1)
    batch_size: int = Field(256, ge=1)
    split_ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    checkpoint: Optional[str] = None


class EvalSpec(StrictSchema):
    checkpoint: Optional[str] = None
    external_rankings: Optional[str] = None
    relevance_threshold: Optional[float] = None


class AblationSpec(StrictSchema):
    preset: AblationPreset = AblationPreset.REWARD_VARIANT


# Configuração de experimento

class ExperimentConfig(StrictSchema):
    """Configuração completa de um experimento."""

    seed: int = 0
    data: DataSpec = Field(default_factory=DataSpec)
    need: NeedSpec = Field(default_factory=NeedSpec)
    policy: PolicySpec = Field(default_factory=PolicySpec)
    trainer: TrainerSpec = Field(default_factory=TrainerSpec)
    critic: CriticSpec = Field(default_factory=CriticSpec)
    eval: EvalSpec = Field(default_factory=EvalSpec)
    ablation: AblationSpec = Field(default_factory=AblationSpec)

    reward_variant: RewardVariant = RewardVariant.CAUSAL_SWAP
    advantage_mode: AdvantageMode = AdvantageMode.ITEM_LEVEL
    uncertainty: bool = False
    reward_source: RewardSource = RewardSource.GROUND_TRUTH
    k_neighbors: int = Field(20, ge=1)

    @model_validator(mode="after")
    def _check_cutoff(self) -> "ExperimentConfig":
        cutoff = self.trainer.reward_cutoff
        if cutoff is not None and cutoff > self.data.n_candidates:
            raise ValueError("trainer.reward_cutoff não pode exceder data.n_candidates")
        return self

    def with_overrides(self, **updates) -> "ExperimentConfig":
        """Cópia revalidada com campos de nível superior substituídos."""
        payload = self.model_dump()
        payload.update(updates)
        return ExperimentConfig.model_validate(payload)


def parse_config(payload: Union[dict, str]) -> ExperimentConfig:
    """Valida um dicionário ou texto JSON."""
    try:
        if isinstance(payload, str):
            payload = json.loads(payload)
        return ExperimentConfig.model_validate(payload)
    except json.JSONDecodeError as e:
        raise ConfigError(f"JSON inválido na linha {e.lineno}: {e.msg}") from e
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"]) or "<raiz>"
        raise ConfigError(f"{location}: {first['msg']}") from e


def load_config(path: Optional[Union[str, Path]] = None, seed: Optional[int] = None) -> ExperimentConfig:
    """Carrega a configuração do arquivo (ou padrões) e aplica --seed."""
    if path is None:
        config = ExperimentConfig()
    else:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"arquivo de configuração não encontrado: {path}")
        config = parse_config(path.read_text(encoding="utf-8"))
    if seed is not None:
        config = config.model_copy(update={"seed": seed})
    return config
