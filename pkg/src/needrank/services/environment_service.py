"""
Serviço de ambiente: monta contextos por usuário a partir de uma fonte de dados
(sintética ou arquivos), com tabelas de relevância e sinais observados.

Para cada usuário, o prefixo cronológico das interações forma o histórico e o
sufixo (holdout_fraction) forma as observações futuras; os candidatos vêm da
recuperação por embeddings e só recebem sinal observado se estiverem no sufixo.
"""

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional

import numpy as np

from ..core.errors import ConfigError
from ..core.logging import get_logger
from ..models import (
    Context,
    EmbeddingTable,
    EsciLabel,
    HistoryEntry,
    InteractionLog,
    NeedVariant,
    Ranking,
    RelevanceTable,
    SignalKind,
)
from ..schemas import ExperimentConfig
from .critic_service import CriticExample
from .data_service import (
    load_embeddings,
    load_esci_labels,
    load_interactions,
    load_topics,
    retrieve_candidates,
    split_user_ids,
    subsample_per_user,
)
from .needs_service import TrendIndex, build_relevance
from .synthetic_service import GroundTruthModel, generate_synthetic

logger = get_logger("environment_service")

SPLITS = ("train", "val", "test")


@dataclass
class Environment:
    """Contextos por divisão mais tudo o que é preciso para recompensá-los."""

    log: InteractionLog
    embeddings: EmbeddingTable
    topics: Dict[int, FrozenSet[str]]
    trend_index: TrendIndex
    signal_kind: SignalKind
    truth: Optional[GroundTruthModel] = None
    splits: Dict[str, List[Context]] = field(default_factory=dict)
    relevance: Dict[str, RelevanceTable] = field(default_factory=dict)
    observed: Dict[str, Dict[int, float]] = field(default_factory=dict)
    future: Dict[str, Dict[int, float]] = field(default_factory=dict)

    def contexts(self, split: str) -> List[Context]:
        return self.splits.get(split, [])

    def context(self, context_id: str) -> Context:
        for contexts in self.splits.values():
            for ctx in contexts:
                if ctx.context_id == context_id:
                    return ctx
        raise KeyError(f"contexto desconhecido: {context_id}")

    def gains(self, ctx: Context, ranking: Ranking) -> np.ndarray:
        """Ganhos verdadeiros na ordem do ranking."""
        return self.relevance[ctx.context_id].vector(ranking.items)

    def critic_examples(self, split: str = "train") -> List[CriticExample]:
        """Uma amostra por interação futura observada de cada contexto da divisão."""
        return [
            CriticExample(context=ctx, item=item, target=signal)
            for ctx in self.contexts(split)
            for item, signal in self.future[ctx.context_id].items()
        ]

    def summary(self) -> Dict[str, int]:
        return {split: len(self.contexts(split)) for split in SPLITS}


def _cap(contexts: List[Context], limit: int, rng: np.random.Generator) -> List[Context]:
    if len(contexts) <= limit:
        return contexts
    keep = np.sort(rng.choice(len(contexts), size=limit, replace=False))
    return [contexts[i] for i in keep]


def build_environment(config: ExperimentConfig) -> Environment:
    """Função pura de (config, seed): dados, divisões, contextos e relevâncias."""
    data = config.data
    need = config.need.to_need()
    subsample_ss, split_ss, cap_ss = np.random.SeedSequence(config.seed).spawn(3)

    truth: Optional[GroundTruthModel] = None
    esci_labels: Dict[int, Dict[int, EsciLabel]] = {}
    if data.files is not None:
        log = load_interactions(data.files.interactions)
        embeddings = load_embeddings(data.files.embeddings)
        topics = load_topics(data.files.topics) if data.files.topics else {}
        if data.files.esci_labels:
            esci_labels = load_esci_labels(data.files.esci_labels)
    else:
        dataset = generate_synthetic(data.synthetic, config.seed)
        log, embeddings, topics, truth = dataset.log, dataset.embeddings, dataset.topics, dataset.truth

    if need.variant == NeedVariant.PRODUCT_SEARCH and truth is None and not esci_labels:
        raise ConfigError("product_search exige data.files.esci_labels")

    log = subsample_per_user(log, data.subsample_fraction, np.random.default_rng(subsample_ss))
    trend_index = TrendIndex(log)
    env = Environment(log=log, embeddings=embeddings, topics=topics, trend_index=trend_index,
                      signal_kind=log.signal_kind, truth=truth)

    assignment = dict(zip(SPLITS, split_user_ids(log.users, np.random.default_rng(split_ss),
                                                 data.split_ratios)))
    split_of = {user: split for split, users in assignment.items() for user in users}
    contexts: Dict[str, List[Context]] = {split: [] for split in SPLITS}

    for user, frame in log.by_user().items():
        n = len(frame)
        n_history = n - int(np.floor(n * data.holdout_fraction))
        rows = list(frame.itertuples(index=False))
        history = tuple(HistoryEntry(item_id=int(r.item_id), signal=float(r.signal_value),
                                     timestamp=int(r.timestamp)) for r in rows[:n_history])
        history_items = {h.item_id for h in history}
        future = {int(r.item_id): float(r.signal_value) for r in rows[n_history:]
                  if int(r.item_id) not in history_items}

        try:
            candidates = retrieve_candidates(history, embeddings, data.history_window,
                                             data.n_candidates, data.discount, data.signal_weighting)
        except ValueError as e:
            raise ConfigError(f"usuário {user}: {e}") from e

        ctx = Context(
            context_id=f"u{user}",
            user_id=user,
            history=history,
            candidates=tuple(candidates),
            need=need,
            metadata={"instruction": need.instruction, "split": split_of[user]},
        )

        if truth is not None:
            signals = truth.signals_for(user, candidates)
            labels = truth.esci_labels_for(user, candidates)
        else:
            logged = {int(r.item_id): float(r.signal_value) for r in rows}
            signals = {item: logged[item] for item in candidates if item in logged}
            labels = esci_labels.get(user, {})

        env.relevance[ctx.context_id] = build_relevance(
            ctx, need, signals=signals, embeddings=embeddings, interactions=trend_index,
            topics=topics, esci_labels=labels, signal_kind=env.signal_kind,
        )
        env.future[ctx.context_id] = future
        env.observed[ctx.context_id] = {item: future[item] for item in candidates if item in future}
        contexts[split_of[user]].append(ctx)

    cap_rng = np.random.default_rng(cap_ss)
    env.splits = {
        "train": _cap(contexts["train"], data.max_train_contexts, cap_rng),
        "val": _cap(contexts["val"], data.max_eval_contexts, cap_rng),
        "test": _cap(contexts["test"], data.max_eval_contexts, cap_rng),
    }
    logger.info(f"Ambiente montado ({need.tag}): {env.summary()}")
    return env
