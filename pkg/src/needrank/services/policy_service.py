"""
Serviço de política de ranking.

Plackett-Luce com pontuadores lineares por estratégia: um passo discreto escolhe a
estratégia s ~ softmax(strategy_logits) e, em seguida, cada posição escolhe um item
do conjunto restante com probabilidade softmax(X w_s / T). Amostragem pelo truque
de Gumbel, log-probabilidades exatas e gradientes analíticos.
"""

import threading
from pathlib import Path
from typing import Dict, FrozenSet, Mapping, Optional, Tuple, Union

import numpy as np
import torch
from scipy.special import log_softmax, logsumexp

from ..core.config import runtime
from ..core.errors import DataFormatError, PolicyError
from ..core.logging import get_logger
from ..core.metrics import policy_updates_total, rollouts_sampled_total
from ..models import (
    Context,
    EmbeddingTable,
    NeedVariant,
    ONE_DAY_SECONDS,
    PolicyGradient,
    PolicyParams,
    Ranking,
    Rollout,
)
from .data_service import query_embedding
from .needs_service import TrendIndex, minmax_normalize, niche_label

logger = get_logger("policy_service")


# =============================================================================
# CARACTERÍSTICAS
# =============================================================================

class FeatureSpace:
    """
    Pipeline determinístico de características por candidato:
    [cosseno com a consulta, tendência min-max, indicador de nicho,
     projeção fixa do embedding, one-hot da necessidade].
    """

    def __init__(self, embeddings: EmbeddingTable,
                 topics: Optional[Mapping[int, FrozenSet[str]]] = None,
                 trend_index: Optional[TrendIndex] = None,
                 projection_dim: int = 4, history_window: int = 10,
                 discount: float = 0.9, signal_weighting: bool = True, seed: int = 0):
        self.embeddings = embeddings
        self.topics = topics or {}
        self.trend_index = trend_index
        self.history_window = history_window
        self.discount = discount
        self.signal_weighting = signal_weighting
        self.projection = (np.random.default_rng(seed).standard_normal((embeddings.dim, projection_dim))
                           / np.sqrt(embeddings.dim))
        self._cache: Dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def dim(self) -> int:
        return 3 + self.projection.shape[1] + len(NeedVariant.ordered())

    def context_features(self, ctx: Context) -> np.ndarray:
        """Matriz [C x D] na ordem de ctx.candidates (cacheada por context_id)."""
        with self._lock:
            cached = self._cache.get(ctx.context_id)
        if cached is not None:
            return cached

        try:
            vectors = self.embeddings.vectors(ctx.candidates)
        except KeyError as e:
            raise PolicyError(str(e.args[0])) from None

        if ctx.history:
            query = query_embedding(ctx.history, self.embeddings, self.history_window,
                                    self.discount, self.signal_weighting)
            cosine = vectors @ query
        else:
            cosine = np.zeros(ctx.size)

        window = ctx.need.window_seconds or ONE_DAY_SECONDS
        if self.trend_index is not None:
            counts = [self.trend_index.count(item, ctx.query_time, window) for item in ctx.candidates]
        else:
            counts = np.zeros(ctx.size)
        trend = minmax_normalize(counts)

        history_topics = set()
        for item in ctx.history_items:
            history_topics |= set(self.topics.get(item, ()))
        niche = np.array([float(niche_label(self.topics.get(item), history_topics))
                          for item in ctx.candidates])

        features = np.column_stack([
            cosine,
            trend,
            niche,
            vectors @ self.projection,
            np.tile(ctx.need.one_hot(), (ctx.size, 1)),
        ])
        with self._lock:
            self._cache[ctx.context_id] = features
        return features

    def featurize(self, ctx: Context, item: int) -> np.ndarray:
        """Vetor de características (comprimento D) de um candidato."""
        if item not in ctx.candidates:
            raise PolicyError(f"item {item} não pertence aos candidatos do contexto {ctx.context_id}")
        return self.context_features(ctx)[ctx.candidates.index(item)]


# =============================================================================
# PLACKETT-LUCE
# =============================================================================

def gumbel_rankings(scores: np.ndarray, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Amostras [n x C] de Plackett-Luce: argsort decrescente de scores + Gumbel."""
    scores = np.asarray(scores, dtype=float)
    perturbed = scores[None, :] + rng.gumbel(size=(n_samples, scores.size))
    return np.argsort(-perturbed, axis=1, kind="stable")


def step_logprobs_from_scores(ordered_scores: np.ndarray) -> np.ndarray:
    """log p_k = z_k - logsumexp(z_k, ..., z_K) para scores na ordem do ranking."""
    tail = np.logaddexp.accumulate(ordered_scores[::-1])[::-1]
    return ordered_scores - tail


def _categorical_entropy(log_probs: np.ndarray) -> float:
    return float(-(np.exp(log_probs) * log_probs).sum())


def step_entropies_from_scores(ordered_scores: np.ndarray) -> np.ndarray:
    """Entropia da distribuição sobre o conjunto restante em cada passo."""
    return np.array([_categorical_entropy(log_softmax(ordered_scores[k:]))
                     for k in range(ordered_scores.size)])


def item_scores(params: PolicyParams, features: np.ndarray, strategy: int) -> np.ndarray:
    return features @ params.score_weights[strategy] / params.temperature


def sample_rollout(params: PolicyParams, ctx: Context, rng: np.random.Generator,
                   features: Union[FeatureSpace, np.ndarray]) -> Rollout:
    """
    Amostra estratégia e ranking completo; determinístico dado o gerador.
    As características saem do FeatureSpace da política ou de uma matriz [C x D] já calculada.
    """
    if ctx.size == 0:
        raise PolicyError("contexto sem candidatos")
    if isinstance(features, FeatureSpace):
        features = features.context_features(ctx)
    if features.shape != (ctx.size, params.dim):
        raise PolicyError(f"características {features.shape} incompatíveis com ({ctx.size}, {params.dim})")

    strategy_lp = log_softmax(params.strategy_logits)
    strategy = int(np.argmax(strategy_lp + rng.gumbel(size=strategy_lp.size)))
    scores = item_scores(params, features, strategy)
    order = gumbel_rankings(scores, 1, rng)[0]

    ordered = scores[order]
    rollouts_sampled_total.inc()
    return Rollout(
        strategy=strategy,
        ranking=Ranking(items=tuple(ctx.candidates[i] for i in order), source_context=ctx.context_id),
        step_logprobs=np.concatenate([[strategy_lp[strategy]], step_logprobs_from_scores(ordered)]),
        positions=order,
        features_used=features,
        step_entropies=np.concatenate([[_categorical_entropy(strategy_lp)],
                                       step_entropies_from_scores(ordered)]),
    )


def _check_rollout(rollout: Rollout, ctx: Optional[Context]):
    if ctx is None:
        return
    if rollout.ranking.source_context != ctx.context_id or not rollout.ranking.is_complete_for(ctx):
        raise PolicyError(f"rollout não corresponde ao contexto {ctx.context_id}")


def evaluate_rollout(params: PolicyParams, rollout: Rollout,
                     ctx: Optional[Context] = None) -> Tuple[np.ndarray, np.ndarray]:
    """(log-probs por passo, entropias por passo) do rollout sob params."""
    _check_rollout(rollout, ctx)
    strategy_lp = log_softmax(params.strategy_logits)
    ordered = item_scores(params, rollout.features_used, rollout.strategy)[rollout.positions]
    logprobs = np.concatenate([[strategy_lp[rollout.strategy]], step_logprobs_from_scores(ordered)])
    entropies = np.concatenate([[_categorical_entropy(strategy_lp)], step_entropies_from_scores(ordered)])
    return logprobs, entropies


def rollout_logprob_and_grad(params: PolicyParams, rollout: Rollout,
                             ctx: Optional[Context] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Log-probs por passo e o jacobiano [K+1 x P] em relação a params.to_vector().
    Passo de estratégia: one_hot(s) - pi. Passo de item k: (x_{a_k} - E_p[x]) / T,
    apenas na linha da estratégia amostrada.
    """
    _check_rollout(rollout, ctx)
    S, D = params.n_strategies, params.dim
    strategy_lp = log_softmax(params.strategy_logits)
    X = rollout.features_used[rollout.positions]
    ordered = X @ params.score_weights[rollout.strategy] / params.temperature
    K = ordered.size

    jacobian = np.zeros((K + 1, params.size))
    jacobian[0, :S] = -np.exp(strategy_lp)
    jacobian[0, rollout.strategy] += 1.0

    offset = S + rollout.strategy * D
    for k in range(K):
        log_p = log_softmax(ordered[k:])
        expected = np.exp(log_p) @ X[k:]
        jacobian[k + 1, offset:offset + D] = (X[k] - expected) / params.temperature

    logprobs = np.concatenate([[strategy_lp[rollout.strategy]], step_logprobs_from_scores(ordered)])
    return logprobs, jacobian


def backprop(params: PolicyParams, rollout: Rollout, dlogprob: np.ndarray,
             dentropy: Optional[np.ndarray] = None) -> PolicyGradient:
    """
    Gradiente de sum_k dlogprob_k * log p_k + sum_k dentropy_k * H_k em relação a params.
    dH/dz = -p (log p + H) para cada distribuição categórica.
    """
    grad = PolicyGradient.zeros_like(params)
    strategy_lp = log_softmax(params.strategy_logits)
    pi = np.exp(strategy_lp)

    grad.strategy_logits += dlogprob[0] * (np.eye(pi.size)[rollout.strategy] - pi)
    if dentropy is not None and dentropy[0] != 0.0:
        h0 = -(pi * strategy_lp).sum()
        grad.strategy_logits += dentropy[0] * (-pi * (strategy_lp + h0))

    X = rollout.features_used[rollout.positions]
    ordered = X @ params.score_weights[rollout.strategy] / params.temperature
    row = np.zeros(params.dim)
    for k in range(ordered.size):
        log_p = log_softmax(ordered[k:])
        p = np.exp(log_p)
        if dlogprob[k + 1] != 0.0:
            row += dlogprob[k + 1] * (X[k] - p @ X[k:])
        if dentropy is not None and dentropy[k + 1] != 0.0:
            h = -(p * log_p).sum()
            row += dentropy[k + 1] * ((-p * (log_p + h)) @ X[k:])
    grad.score_weights[rollout.strategy] += row / params.temperature
    return grad


def greedy_ranking(params: PolicyParams, ctx: Context, features: np.ndarray) -> Tuple[Ranking, int]:
    """Decodificação gulosa (limite T -> 0): melhor estratégia e scores decrescentes."""
    strategy = int(np.argmax(params.strategy_logits))
    order = np.argsort(-(features @ params.score_weights[strategy]), kind="stable")
    return Ranking(items=tuple(ctx.candidates[i] for i in order), source_context=ctx.context_id), strategy


def strategy_probabilities(params: PolicyParams) -> np.ndarray:
    return np.exp(params.strategy_logits - logsumexp(params.strategy_logits))


# =============================================================================
# CHECKPOINT
# =============================================================================

def save_policy(params: PolicyParams, path: Union[str, Path]):
    """Cabeçalho `NRPOL1 S D T` seguido do vetor plano em float64 little-endian."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"{runtime.POLICY_CHECKPOINT_TAG} {params.n_strategies} {params.dim} {params.temperature!r}\n"
    with path.open("wb") as handle:
        handle.write(header.encode("ascii"))
        handle.write(params.to_vector().astype("<f8").tobytes())


def load_policy(path: Union[str, Path]) -> PolicyParams:
    path = Path(path)
    raw = path.read_bytes()
    header, sep, body = raw.partition(b"\n")
    parts = header.decode("ascii", errors="replace").split()
    if not sep or len(parts) != 4 or parts[0] != runtime.POLICY_CHECKPOINT_TAG:
        raise DataFormatError(f"{path}: cabeçalho de checkpoint de política inválido", line_number=1)
    try:
        n_strategies, dim, temperature = int(parts[1]), int(parts[2]), float(parts[3])
    except ValueError:
        raise DataFormatError(f"{path}: cabeçalho com valores inválidos", line_number=1) from None
    vector = np.frombuffer(body, dtype="<f8")
    if vector.size != n_strategies * (dim + 1):
        raise DataFormatError(f"{path}: esperado {n_strategies * (dim + 1)} parâmetros, "
                              f"encontrado {vector.size}")
    return PolicyParams.from_vector(vector.astype(float), n_strategies, dim, temperature)


# =============================================================================
# OTIMIZADOR
# =============================================================================

class PolicyOptimizer:
    """
    Otimizador torch sobre tensores que compartilham memória com os arrays de
    PolicyParams; os gradientes vêm de backprop.
    """

    def __init__(self, params: PolicyParams, learning_rate: float, kind: str = "adam"):
        self.params = params
        self._tensors = [torch.from_numpy(params.strategy_logits),
                         torch.from_numpy(params.score_weights)]
        for tensor in self._tensors:
            tensor.requires_grad_(True)
        if kind == "adam":
            self.optimizer = torch.optim.Adam(self._tensors, lr=learning_rate)
        elif kind == "sgd":
            self.optimizer = torch.optim.SGD(self._tensors, lr=learning_rate)
        else:
            raise PolicyError(f"otimizador desconhecido: {kind}")

    def step(self, gradient: PolicyGradient):
        """Um passo de descida com o gradiente da perda."""
        for tensor, grad in zip(self._tensors, (gradient.strategy_logits, gradient.score_weights)):
            tensor.grad = torch.from_numpy(np.array(grad, dtype=np.float64, copy=True))
        self.optimizer.step()
        self.optimizer.zero_grad(set_to_none=True)
        policy_updates_total.inc()
