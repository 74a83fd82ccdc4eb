"""
Serviço de vantagens GRPO.
Normalização agrupada por item, vantagens de sequência, pesos por inverso da
variância e a perda substituta recortada com penalidade KL e bônus de entropia.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import PolicyError, RewardError
from ..core.logging import get_logger
from ..models import AdvantageAssignment, AdvantageMode, PolicyGradient, PolicyParams, RolloutGroup
from .policy_service import backprop, evaluate_rollout

logger = get_logger("advantage_service")

ADVANTAGE_EPS = 1e-8
WEIGHT_EPS = 1e-6


def _standardize(values: np.ndarray, eps: float) -> np.ndarray:
    if values.size == 0:
        raise RewardError("não há recompensas para normalizar")
    if eps < 0:
        raise RewardError(f"eps deve ser não negativo: {eps}")
    if np.ptp(values) == 0.0:
        return np.zeros_like(values)
    return (values - values.mean()) / (values.std() + eps)


def item_advantages(rewards: np.ndarray, eps: float = ADVANTAGE_EPS) -> np.ndarray:
    """(r - mu_g) / (sigma_g + eps) com momentos sobre todas as G*K recompensas do grupo."""
    return _standardize(np.asarray(rewards, dtype=float), eps)


def seq_advantages(rewards: Sequence[float], eps: float = ADVANTAGE_EPS) -> np.ndarray:
    """Padronização das G recompensas de sequência."""
    return _standardize(np.asarray(rewards, dtype=float).ravel(), eps)


def uncertainty_weights(variances: Sequence[float], eps: float = WEIGHT_EPS) -> np.ndarray:
    """c_i = 1/(v_i + eps), normalizado pela média do grupo e recortado em 1."""
    variances = np.asarray(variances, dtype=float)
    if variances.size == 0:
        raise RewardError("lista de variâncias vazia")
    if np.any(variances < 0) or not np.all(np.isfinite(variances)):
        raise RewardError("variâncias devem ser finitas e não negativas")
    if eps == 0.0 and np.any(variances == 0.0):
        raise RewardError("variância zero exige eps > 0")
    raw = 1.0 / (variances + eps)
    return np.minimum(raw / raw.mean(), 1.0)


def aggregate_sequence_variance(item_vars: Sequence[float]) -> float:
    """Var[R] como soma das variâncias por item, sem covariâncias."""
    item_vars = np.asarray(item_vars, dtype=float)
    if np.any(item_vars < 0):
        raise RewardError("variâncias devem ser não negativas")
    return float(item_vars.sum())


def assign_token_advantages(group: RolloutGroup, mode: AdvantageMode, uncertainty: bool,
                            per_item_uncertainty: bool = False,
                            adv_eps: float = ADVANTAGE_EPS,
                            weight_eps: float = WEIGHT_EPS) -> AdvantageAssignment:
    """
    Vantagem por passo [G x (K+1)]. ItemLevel: passo de estratégia recebe A_seq
    e cada passo de item recebe A_item; SequenceLevel: todos recebem A_seq.
    Com incerteza, A_seq é multiplicado por c_i.
    """
    G, K = group.item_rewards.shape
    if any(r.step_logprobs.size != K + 1 for r in group.rollouts):
        raise RewardError(f"rollouts devem ter {K + 1} passos para {K} recompensas por item")

    item_adv = item_advantages(group.item_rewards, adv_eps)
    seq_adv = seq_advantages(group.seq_rewards, adv_eps)
    weights = uncertainty_weights(group.seq_variances, weight_eps) if uncertainty else np.ones(G)
    weighted = weights * seq_adv

    if mode == AdvantageMode.SEQUENCE_LEVEL:
        steps = np.repeat(weighted[:, None], K + 1, axis=1)
    else:
        item_part = item_adv
        if uncertainty and per_item_uncertainty:
            if group.item_variances is None or group.item_variances.shape != (G, K):
                raise RewardError("incerteza por item exige item_variances [G x K]")
            item_part = item_adv * uncertainty_weights(group.item_variances.ravel(),
                                                       weight_eps).reshape(G, K)
        steps = np.column_stack([weighted, item_part])

    return AdvantageAssignment(item_adv=item_adv, seq_adv=seq_adv, weights=weights,
                               weighted_seq_adv=weighted, step_advantages=steps)


@dataclass
class GrpoTerms:
    """Perda total, seus componentes e as derivadas por passo."""

    loss: float
    surrogate: float
    kl: float
    entropy: float
    dlogprob: np.ndarray
    dentropy: np.ndarray


def grpo_loss(step_advantages: np.ndarray, logprobs: np.ndarray, ref_logprobs: np.ndarray,
              old_logprobs: np.ndarray, entropies: Optional[np.ndarray] = None,
              clip_ratio: float = 0.2, kl_coeff: float = 0.01,
              entropy_coeff: float = 0.005) -> GrpoTerms:
    """
    Média por passo de -min(rho*A, clip(rho, 1-c, 1+c)*A)
    + kl_coeff * (exp(ref - lp) - (ref - lp) - 1) - entropy_coeff * H.
    """
    arrays = [np.asarray(a, dtype=float) for a in (step_advantages, logprobs, ref_logprobs, old_logprobs)]
    advantages, logprobs, ref_logprobs, old_logprobs = arrays
    if entropies is None:
        entropies = np.zeros_like(logprobs)
    entropies = np.asarray(entropies, dtype=float)
    if any(a.shape != advantages.shape for a in (logprobs, ref_logprobs, old_logprobs, entropies)):
        raise PolicyError("passos desalinhados entre vantagens e log-probs")
    if clip_ratio <= 0:
        raise PolicyError("clip_ratio deve ser positivo")
    if not all(np.all(np.isfinite(a)) for a in (logprobs, ref_logprobs, old_logprobs, entropies)):
        raise PolicyError("log-probabilidades não finitas")

    n = advantages.size
    ratio = np.exp(logprobs - old_logprobs)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio) * advantages
    surrogate_terms = -np.minimum(unclipped, clipped)
    inside = (ratio >= 1.0 - clip_ratio) & (ratio <= 1.0 + clip_ratio)
    d_surrogate = np.where((unclipped <= clipped) | inside, -advantages * ratio, 0.0)

    diff = ref_logprobs - logprobs
    kl_terms = np.exp(diff) - diff - 1.0
    d_kl = 1.0 - np.exp(diff)

    surrogate = float(surrogate_terms.sum() / n)
    kl = float(kl_terms.sum() / n)
    entropy = float(entropies.sum() / n)
    loss = surrogate + kl_coeff * kl - entropy_coeff * entropy

    return GrpoTerms(
        loss=loss,
        surrogate=surrogate,
        kl=kl,
        entropy=entropy,
        dlogprob=(d_surrogate + kl_coeff * d_kl) / n,
        dentropy=np.full(advantages.shape, -entropy_coeff / n),
    )


def grpo_objective(params: PolicyParams, groups: Sequence[RolloutGroup],
                   assignments: Sequence[AdvantageAssignment], clip_ratio: float = 0.2,
                   kl_coeff: float = 0.01, entropy_coeff: float = 0.005) -> Tuple[GrpoTerms, PolicyGradient]:
    """Perda do lote e gradiente em params, acumulado na ordem dos grupos e rollouts."""
    rollouts = [r for group in groups for r in group.rollouts]
    if not rollouts:
        raise PolicyError("lote sem rollouts")

    current: List[np.ndarray] = []
    entropies: List[np.ndarray] = []
    for rollout in rollouts:
        lp, ent = evaluate_rollout(params, rollout)
        current.append(lp)
        entropies.append(ent)

    lengths = [lp.size for lp in current]
    terms = grpo_loss(
        np.concatenate([a.step_advantages.ravel() for a in assignments]),
        np.concatenate(current),
        np.concatenate([g.ref_step_logprobs.ravel() for g in groups]),
        np.concatenate([r.step_logprobs for r in rollouts]),
        np.concatenate(entropies),
        clip_ratio, kl_coeff, entropy_coeff,
    )

    gradient = PolicyGradient.zeros_like(params)
    bounds = np.cumsum([0] + lengths)
    for rollout, lo, hi in zip(rollouts, bounds[:-1], bounds[1:]):
        gradient.add_(backprop(params, rollout, terms.dlogprob[lo:hi], terms.dentropy[lo:hi]))
    return terms, gradient
