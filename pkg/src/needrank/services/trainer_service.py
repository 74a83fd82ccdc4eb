"""
Serviço de treinamento e avaliação.
Orquestra ambiente, política, recompensas, vantagens, crítico e métricas, e grava
as tabelas CSV de cada comando.
"""

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..core.config import metrics as metrics_config
from ..core.config import runtime
from ..core.errors import ConfigError, DivergenceError, PolicyError
from ..core.logging import get_logger
from ..core.metrics import export_metrics, track_duration, train_step_seconds
from ..core.monitoring import RunMonitor
from ..models import (
    AblationPreset,
    AdvantageMode,
    CALIBRATION_COLUMNS,
    CalibrationReport,
    CFMode,
    Context,
    METRIC_REPORT_COLUMNS,
    MetricReport,
    NeedVariant,
    PolicyParams,
    Ranking,
    RewardSource,
    RewardVariant,
    RolloutGroup,
)
from ..schemas import ExperimentConfig
from .advantage_service import aggregate_sequence_variance, assign_token_advantages, grpo_objective
from .critic_service import Critic, RewardPredictor, impute_rewards, load_critic, save_critic, train_critic
from .data_service import (
    load_external_rankings,
    save_embeddings,
    save_interactions,
    save_relevance_table,
    save_topics,
)
from .environment_service import Environment, build_environment
from .knn_service import KNNImputer
from .policy_service import (
    FeatureSpace,
    PolicyOptimizer,
    evaluate_rollout,
    greedy_ranking,
    load_policy,
    sample_rollout,
    save_policy,
)
from .ranking_service import metrics, ndcg_from_gains, pad_invalid, sanitize_partial
from .reward_service import contribution_variances, item_rewards_from_gains
from .synthetic_service import generate_synthetic

logger = get_logger("trainer_service")

TRAIN_LOG_COLUMNS = [
    "step", "mean_seq_reward", "loss", "surrogate", "kl", "entropy", "mean_weight", "grad_norm",
    "val_ndcg5", "val_ndcg10",
]
EVAL_SUMMARY_COLUMNS = ["metric", "mean", "stderr"]
ABLATION_COLUMNS = ["configuration", "ndcg5", "ndcg10", "ndcg30", "recall5", "mrr5", "precision5",
                    "context_digest"]
SUMMARY_METRICS = ["ndcg5", "ndcg10", "ndcg30", "recall5", "mrr5", "precision5", "n_invalid_items"]

# Rótulos das correntes aleatórias derivadas da semente do experimento
BATCH_STREAM = 1
ROLLOUT_STREAM = 2
PAD_STREAM = 3

PathLike = Union[str, Path]


def write_csv(frame: pd.DataFrame, path: PathLike):
    """CSV com ordem de colunas fixa, 17 dígitos significativos e LF."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n", na_rep="",
                 encoding="utf-8")


def _export_run_metrics(out_dir: Path):
    if metrics_config.EXPORT_ENABLED:
        export_metrics(out_dir / metrics_config.EXPORT_FILENAME)


def feature_space_for(env: Environment, config: ExperimentConfig) -> FeatureSpace:
    return FeatureSpace(
        env.embeddings, env.topics, env.trend_index,
        projection_dim=config.policy.projection_dim,
        history_window=config.data.history_window,
        discount=config.data.discount,
        signal_weighting=config.data.signal_weighting,
        seed=config.seed,
    )


# =============================================================================
# RECOMPENSAS
# =============================================================================

class RewardOracle:
    """Ganhos e variâncias de ganho por contexto, verdadeiros ou imputados."""

    def __init__(self, env: Environment, source: RewardSource,
                 predictor: Optional[RewardPredictor] = None):
        if source != RewardSource.GROUND_TRUTH and predictor is None:
            raise ConfigError(f"fonte de recompensa {source.value} exige um preditor")
        self.env = env
        self.source = source
        self.predictor = predictor
        self._tables: Dict[str, Dict[int, Tuple[float, float]]] = {}

    def _table(self, ctx: Context) -> Dict[int, Tuple[float, float]]:
        table = self._tables.get(ctx.context_id)
        if table is not None:
            return table
        reference = Ranking(items=ctx.candidates, source_context=ctx.context_id)
        if self.source == RewardSource.GROUND_TRUTH or ctx.need.variant != NeedVariant.MAX_INTEREST:
            gains = self.env.gains(ctx, reference)
            variances = np.zeros(gains.size)
        else:
            gains, variances = impute_rewards(self.predictor, ctx, reference,
                                              self.env.observed[ctx.context_id], self.env.signal_kind)
        table = {item: (float(g), float(v)) for item, g, v in zip(ctx.candidates, gains, variances)}
        self._tables[ctx.context_id] = table
        return table

    def lookup(self, ctx: Context, ranking: Ranking) -> Tuple[np.ndarray, np.ndarray]:
        table = self._table(ctx)
        pairs = np.array([table[item] for item in ranking.items])
        return pairs[:, 0], pairs[:, 1]


def build_predictor(config: ExperimentConfig, env: Environment, out_dir: Optional[Path] = None,
                    critic: Optional[Critic] = None) -> Optional[RewardPredictor]:
    """Crítico (carregado, reutilizado ou treinado) ou KNN conforme a fonte de recompensa."""
    source = config.reward_source
    if source == RewardSource.GROUND_TRUTH:
        return None
    if source.is_cf:
        train_users = [ctx.user_id for ctx in env.contexts("train")]
        mode = CFMode.USER_KNN if source == RewardSource.USER_KNN else CFMode.ITEM_KNN
        return KNNImputer(env.log.for_users(train_users), mode, config.k_neighbors)
    if critic is not None:
        return critic
    if config.critic.checkpoint:
        return load_critic(config.critic.checkpoint, env.embeddings)
    critic, report = train_critic(env.critic_examples("train"), env.embeddings, config.critic,
                                  config.seed, config.data.history_window)
    if out_dir is not None:
        save_critic(critic, out_dir / "critic.ckpt")
        write_csv(pd.DataFrame([report.to_row()], columns=CALIBRATION_COLUMNS), out_dir / "calibration.csv")
    return critic


# =============================================================================
# ROLLOUTS E AVALIAÇÃO
# =============================================================================

def build_group(group_id: int, ctx: Context, params: PolicyParams, ref_params: PolicyParams,
                features: FeatureSpace, rng: np.random.Generator, oracle: RewardOracle,
                config: ExperimentConfig) -> RolloutGroup:
    """Amostra G rollouts de um contexto e calcula recompensas e variâncias."""
    trainer = config.trainer
    K_cut = trainer.reward_cutoff or ctx.size
    rollouts = [sample_rollout(params, ctx, rng, features) for _ in range(trainer.group_size)]

    item_rewards, seq_rewards, item_vars, seq_vars = [], [], [], []
    for rollout in rollouts:
        gains, gain_vars = oracle.lookup(ctx, rollout.ranking)
        item_rewards.append(item_rewards_from_gains(config.reward_variant, gains, K_cut, trainer.gain_mode))
        seq_rewards.append(ndcg_from_gains(gains, K_cut, trainer.gain_mode))
        contribution = contribution_variances(gains, gain_vars, K_cut, trainer.gain_mode)
        item_vars.append(contribution)
        seq_vars.append(aggregate_sequence_variance(contribution))

    return RolloutGroup(
        group_id=group_id,
        context=ctx,
        rollouts=rollouts,
        ref_step_logprobs=np.stack([evaluate_rollout(ref_params, r)[0] for r in rollouts]),
        item_rewards=np.array(item_rewards),
        seq_rewards=np.array(seq_rewards),
        seq_variances=np.array(seq_vars),
        item_variances=np.array(item_vars),
    )


def validation_ndcg(params: PolicyParams, contexts: Sequence[Context], env: Environment,
                    features: FeatureSpace, config: ExperimentConfig) -> Tuple[float, float]:
    """NDCG@5 e NDCG@10 médios sob decodificação gulosa."""
    if not contexts:
        return float("nan"), float("nan")
    scores = []
    for ctx in contexts:
        ranking, _ = greedy_ranking(params, ctx, features.context_features(ctx))
        gains = env.gains(ctx, ranking)
        scores.append([ndcg_from_gains(gains, min(k, gains.size), config.trainer.gain_mode) for k in (5, 10)])
    means = np.mean(scores, axis=0)
    return float(means[0]), float(means[1])


def evaluate_ranker(env: Environment, contexts: Sequence[Context],
                    ranker: Callable[[Context], Tuple[Sequence[int], int]],
                    config: ExperimentConfig) -> List[MetricReport]:
    """Métricas de um ranqueador qualquer; listas incompletas são completadas aleatoriamente."""
    reports = []
    for ctx in contexts:
        items, n_invalid = ranker(ctx)
        ranking = Ranking(items=tuple(items), source_context=ctx.context_id)
        if not ranking.is_complete_for(ctx):
            rng = np.random.default_rng([config.seed, PAD_STREAM, ctx.user_id])
            ranking = pad_invalid(list(items), ctx, rng)
        reports.append(metrics(ranking, env.relevance[ctx.context_id], config.eval.relevance_threshold,
                               n_invalid, config.trainer.gain_mode))
    return reports


def summarize_reports(reports: Sequence[MetricReport]) -> pd.DataFrame:
    """Média e erro padrão de cada métrica."""
    frame = pd.DataFrame([r.to_row() for r in reports], columns=METRIC_REPORT_COLUMNS)
    rows = []
    for metric in SUMMARY_METRICS:
        values = frame[metric].to_numpy(dtype=float)
        stderr = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
        rows.append({"metric": metric, "mean": float(values.mean()) if values.size else float("nan"),
                     "stderr": stderr})
    return pd.DataFrame(rows, columns=EVAL_SUMMARY_COLUMNS)


def context_digest(batches: Sequence[Sequence[str]]) -> str:
    """Resumo SHA-256 da sequência de contextos amostrados."""
    text = "\n".join(",".join(batch) for batch in batches)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


# =============================================================================
# TREINAMENTO
# =============================================================================

@dataclass
class TrainResult:
    params: PolicyParams
    train_log: pd.DataFrame
    batches: List[List[str]] = field(default_factory=list)
    calibration: Optional[CalibrationReport] = None


def _batch_indices(config: ExperimentConfig, step: int, n_contexts: int) -> np.ndarray:
    size = min(config.trainer.contexts_per_batch, n_contexts)
    rng = np.random.default_rng([config.seed, BATCH_STREAM, step])
    return np.sort(rng.choice(n_contexts, size=size, replace=False))


def run_train(config: ExperimentConfig, out_dir: PathLike, env: Optional[Environment] = None,
              predictor: Optional[RewardPredictor] = None) -> TrainResult:
    """Laço GRPO: amostragem, recompensas, vantagens e passo de gradiente por lote."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    env = env or build_environment(config)
    train_contexts = env.contexts("train")
    val_contexts = env.contexts("val")
    if not train_contexts:
        raise ConfigError("divisão de treino sem contextos")

    features = feature_space_for(env, config)
    predictor = predictor or build_predictor(config, env, out_dir)
    oracle = RewardOracle(env, config.reward_source, predictor)

    trainer = config.trainer
    params = PolicyParams.zeros(config.policy.n_strategies, features.dim, config.policy.temperature)
    ref_params = params.copy()
    optimizer = PolicyOptimizer(params, trainer.learning_rate, trainer.optimizer)
    monitor = RunMonitor()

    rows = []
    val5, val10 = validation_ndcg(params, val_contexts, env, features, config)
    rows.append({"step": 0, "val_ndcg5": val5, "val_ndcg10": val10})
    logger.info(
        f"Treino: {len(train_contexts)} contextos, {trainer.steps} passos, G={trainer.group_size}, "
        f"recompensa {config.reward_variant.value}, modo {config.advantage_mode.value}, "
        f"incerteza {config.uncertainty}, fonte {config.reward_source.value}; NDCG@5 inicial {val5:.4f}"
    )

    batches: List[List[str]] = []
    with ThreadPoolExecutor(max_workers=max(1, runtime.WORKERS)) as pool:

        @track_duration(train_step_seconds)
        def train_step(step: int) -> dict:
            batch = [train_contexts[i] for i in _batch_indices(config, step, len(train_contexts))]
            batches.append([ctx.context_id for ctx in batch])

            def group_for(slot: int) -> RolloutGroup:
                ctx = batch[slot]
                rng = np.random.default_rng([config.seed, ROLLOUT_STREAM, step, slot])
                return build_group(slot, ctx, params, ref_params, features, rng, oracle, config)

            # map preserva a ordem: a redução é a mesma para qualquer número de workers
            groups = list(pool.map(group_for, range(len(batch))))
            assignments = [
                assign_token_advantages(g, config.advantage_mode, config.uncertainty,
                                        trainer.per_item_uncertainty, trainer.adv_eps, trainer.weight_eps)
                for g in groups
            ]

            first = None
            for _ in range(trainer.inner_epochs):
                last_good = params.copy()
                try:
                    terms, gradient = grpo_objective(params, groups, assignments, trainer.clip_ratio,
                                                     trainer.kl_coeff, trainer.entropy_coeff)
                except PolicyError as e:
                    terms, gradient = None, None
                    reason = str(e)
                if terms is None or not np.isfinite(terms.loss) or not np.isfinite(gradient.norm()):
                    save_policy(last_good, out_dir / "policy.ckpt")
                    raise DivergenceError("perda não finita no treino da política",
                                          {"step": step, "reason": reason if terms is None else "loss"})
                first = first or (terms, gradient.norm())
                optimizer.step(gradient)

            if trainer.ref_refresh_every and step % trainer.ref_refresh_every == 0:
                ref_params.score_weights[...] = params.score_weights
                ref_params.strategy_logits[...] = params.strategy_logits

            terms, grad_norm = first
            return {
                "step": step,
                "mean_seq_reward": float(np.mean([g.seq_rewards.mean() for g in groups])),
                "loss": terms.loss,
                "surrogate": terms.surrogate,
                "kl": terms.kl,
                "entropy": terms.entropy,
                "mean_weight": float(np.mean([a.weights.mean() for a in assignments])),
                "grad_norm": grad_norm,
            }

        for step in range(1, trainer.steps + 1):
            row = train_step(step)
            if step % trainer.eval_every == 0 or step == trainer.steps:
                row["val_ndcg5"], row["val_ndcg10"] = validation_ndcg(params, val_contexts, env,
                                                                      features, config)
                monitor.report(step, [params.score_weights, params.strategy_logits])
                logger.info(f"Passo {step}: recompensa média {row['mean_seq_reward']:.4f}, "
                            f"NDCG@5 validação {row['val_ndcg5']:.4f}")
            rows.append(row)

    train_log = pd.DataFrame(rows, columns=TRAIN_LOG_COLUMNS)
    write_csv(train_log, out_dir / "train_log.csv")
    save_policy(params, out_dir / "policy.ckpt")
    _export_run_metrics(out_dir)
    return TrainResult(params=params, train_log=train_log, batches=batches)


# =============================================================================
# COMANDOS
# =============================================================================

def run_gen_synthetic(config: ExperimentConfig, out_dir: PathLike) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    if config.data.synthetic is None:
        raise ConfigError("gen-synthetic exige data.synthetic")
    dataset = generate_synthetic(config.data.synthetic, config.seed)
    paths = {
        "interactions": out_dir / "interactions.csv",
        "embeddings": out_dir / "embeddings.tsv",
        "topics": out_dir / "topics.tsv",
        "ground_truth": out_dir / "ground_truth.npz",
    }
    save_interactions(dataset.log, paths["interactions"])
    save_embeddings(dataset.embeddings, paths["embeddings"])
    save_topics(dataset.topics, paths["topics"])
    dataset.truth.save(paths["ground_truth"])
    return paths


def run_make_needs(config: ExperimentConfig, out_dir: PathLike) -> pd.DataFrame:
    """Grava contexts.csv e uma tabela de relevância por contexto."""
    out_dir = Path(out_dir)
    env = build_environment(config)
    rows = []
    for split in ("train", "val", "test"):
        for ctx in env.contexts(split):
            save_relevance_table(env.relevance[ctx.context_id], out_dir / "relevance" / f"{ctx.context_id}.tsv")
            rows.append({
                "context_id": ctx.context_id,
                "user_id": ctx.user_id,
                "split": split,
                "need": ctx.need.tag,
                "candidates": " ".join(str(i) for i in ctx.candidates),
            })
    frame = pd.DataFrame(rows, columns=["context_id", "user_id", "split", "need", "candidates"])
    write_csv(frame, out_dir / "contexts.csv")
    return frame


def run_train_critic(config: ExperimentConfig, out_dir: PathLike) -> CalibrationReport:
    out_dir = Path(out_dir)
    env = build_environment(config)
    critic, report = train_critic(env.critic_examples("train"), env.embeddings, config.critic,
                                  config.seed, config.data.history_window)
    save_critic(critic, out_dir / "critic.ckpt")
    write_csv(pd.DataFrame([report.to_row()], columns=CALIBRATION_COLUMNS), out_dir / "calibration.csv")
    _export_run_metrics(out_dir)
    return report


def run_eval(config: ExperimentConfig, out_dir: PathLike, checkpoint: Optional[PathLike] = None,
             env: Optional[Environment] = None, params: Optional[PolicyParams] = None) -> pd.DataFrame:
    """Avalia a política (ou listas externas) no teste; grava eval.csv e eval_summary.csv."""
    out_dir = Path(out_dir)
    env = env or build_environment(config)
    contexts = env.contexts("test")

    if config.eval.external_rankings:
        external = load_external_rankings(config.eval.external_rankings)

        def ranker(ctx: Context):
            valid, n_invalid = sanitize_partial(external.get(ctx.context_id, []), ctx)
            return valid, n_invalid
    else:
        if params is None:
            path = Path(checkpoint or config.eval.checkpoint or out_dir / "policy.ckpt")
            if not path.exists():
                raise ConfigError(f"checkpoint de política não encontrado: {path}")
            params = load_policy(path)
        features = feature_space_for(env, config)
        if params.dim != features.dim:
            raise ConfigError(f"checkpoint com D={params.dim}, características com D={features.dim}")

        def ranker(ctx: Context):
            ranking, _ = greedy_ranking(params, ctx, features.context_features(ctx))
            return ranking.items, 0

    reports = evaluate_ranker(env, contexts, ranker, config)
    write_csv(pd.DataFrame([r.to_row() for r in reports], columns=METRIC_REPORT_COLUMNS), out_dir / "eval.csv")
    summary = summarize_reports(reports)
    write_csv(summary, out_dir / "eval_summary.csv")
    logger.info(f"Avaliação em {len(reports)} contextos: NDCG@5 {summary['mean'].iloc[0]:.4f}")
    return summary


ABLATION_PRESETS: Dict[AblationPreset, List[Tuple[str, dict]]] = {
    AblationPreset.REWARD_VARIANT: [
        ("causal_swap", {"reward_variant": RewardVariant.CAUSAL_SWAP}),
        ("noncausal_swap", {"reward_variant": RewardVariant.NONCAUSAL_SWAP}),
        ("independent_contribution", {"reward_variant": RewardVariant.INDEPENDENT_CONTRIBUTION}),
    ],
    AblationPreset.UNCERTAINTY: [
        ("user_knn", {"reward_source": RewardSource.USER_KNN, "uncertainty": False}),
        ("item_knn", {"reward_source": RewardSource.ITEM_KNN, "uncertainty": False}),
        ("critic_raw", {"reward_source": RewardSource.CRITIC, "uncertainty": False}),
        ("critic_uncertainty", {"reward_source": RewardSource.CRITIC, "uncertainty": True}),
    ],
    AblationPreset.ADVANTAGE_MODE: [
        ("item_level", {"advantage_mode": AdvantageMode.ITEM_LEVEL}),
        ("sequence_level", {"advantage_mode": AdvantageMode.SEQUENCE_LEVEL}),
    ],
}


def run_ablation(config: ExperimentConfig, out_dir: PathLike,
                 preset: Optional[AblationPreset] = None) -> pd.DataFrame:
    """Executa as configurações do preset com a mesma semente e ambiente; grava ablation.csv."""
    out_dir = Path(out_dir)
    preset = preset or config.ablation.preset
    env = build_environment(config)
    critic: Optional[Critic] = None
    rows = []
    for name, overrides in ABLATION_PRESETS[preset]:
        row_config = config.with_overrides(**overrides)
        row_dir = out_dir / name
        predictor = None
        if row_config.reward_source == RewardSource.CRITIC:
            # Um único crítico compartilhado pelas linhas que o usam
            critic = critic or build_predictor(row_config, env, out_dir)
            predictor = critic
        result = run_train(row_config, row_dir, env=env, predictor=predictor)
        summary = run_eval(row_config, row_dir, env=env, params=result.params)
        means = dict(zip(summary["metric"], summary["mean"]))
        rows.append({
            "configuration": name,
            **{metric: means[metric] for metric in ABLATION_COLUMNS[1:-1]},
            "context_digest": context_digest(result.batches),
        })
        logger.info(f"Ablação {preset.value}/{name}: NDCG@5 {means['ndcg5']:.4f}")

    table = pd.DataFrame(rows, columns=ABLATION_COLUMNS)
    write_csv(table, out_dir / "ablation.csv")
    (out_dir / "ablation_config.json").write_text(
        json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return table
