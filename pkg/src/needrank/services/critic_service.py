"""
Serviço do crítico heteroscedástico.

Prevê média e variância do engajamento de um item dado o histórico do usuário.
O histórico é resumido (média ponderada pelo sinal, média simples e sinal médio),
codificado em u por um MLP e combinado ao embedding fixo c do item em
[u, c, u*c, u.c]. Treinado com beta-NLL, peso sigma^(2 beta) destacado do grafo.
"""

import copy
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Mapping, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import torch
from scipy import stats
from torch import nn
from torch.nn.utils import parameters_to_vector, vector_to_parameters
from torch.utils.data import DataLoader, TensorDataset

from ..core.config import runtime
from ..core.errors import CriticError, DataFormatError, DivergenceError
from ..core.logging import get_logger
from ..core.metrics import critic_epochs_total
from ..models import (
    CalibrationReport,
    Context,
    CriticPrediction,
    EmbeddingTable,
    HistoryEntry,
    Ranking,
    SignalKind,
)
from ..schemas import CriticSpec
from .needs_service import interest_gain

logger = get_logger("critic_service")

LOGVAR_MIN = -10.0
LOGVAR_MAX = 6.0


# =============================================================================
# REDE
# =============================================================================

def interaction_features(user: torch.Tensor, item: torch.Tensor) -> torch.Tensor:
    """[u, c, u*c, u.c] ao longo da última dimensão."""
    return torch.cat([user, item, user * item, (user * item).sum(dim=-1, keepdim=True)], dim=-1)


class InteractionCritic(nn.Module):
    """Codificador de histórico, tronco de interação e cabeças de média e log-variância."""

    def __init__(self, embedding_dim: int, hidden_dim: int = 256, dropout: float = 0.05):
        super().__init__()
        self.embedding_dim = embedding_dim
        self.hidden_dim = hidden_dim
        self.dropout = dropout
        self.history_encoder = nn.Sequential(
            nn.Linear(2 * embedding_dim + 1, hidden_dim),
            nn.LayerNorm(hidden_dim),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(hidden_dim, embedding_dim),
        )
        self.default_user = nn.Parameter(torch.zeros(embedding_dim))
        self.trunk = nn.Sequential(
            nn.Linear(3 * embedding_dim + 1, hidden_dim),
            nn.LayerNorm(hidden_dim),
            nn.ReLU(),
            nn.Dropout(dropout),
        )
        self.mean_head = nn.Linear(hidden_dim, 1)
        self.logvar_head = nn.Linear(hidden_dim, 1)

    def encode_users(self, summary: torch.Tensor, has_history: torch.Tensor) -> torch.Tensor:
        encoded = self.history_encoder(summary)
        return torch.where(has_history[:, None], encoded, self.default_user.expand_as(encoded))

    def forward(self, summary: torch.Tensor, has_history: torch.Tensor,
                items: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        hidden = self.trunk(interaction_features(self.encode_users(summary, has_history), items))
        mean = self.mean_head(hidden).squeeze(-1)
        logvar = self.logvar_head(hidden).squeeze(-1).clamp(LOGVAR_MIN, LOGVAR_MAX)
        return mean, logvar


def history_summary(history: Sequence[HistoryEntry], embeddings: EmbeddingTable,
                    history_window: int = 10) -> Tuple[np.ndarray, bool]:
    """Vetor [2D+1] do histórico recente e se havia histórico."""
    recent = list(history)[-history_window:]
    if not recent:
        return np.zeros(2 * embeddings.dim + 1), False
    vectors = embeddings.vectors([h.item_id for h in recent])
    signals = np.array([h.signal for h in recent], dtype=float)
    plain = vectors.mean(axis=0)
    total = signals.sum()
    weighted = signals @ vectors / total if total > 0 else plain
    return np.concatenate([weighted, plain, [signals.mean()]]), True


# =============================================================================
# PERDA
# =============================================================================

@dataclass
class BetaNLLTerms:
    loss: float
    grad_mean: float
    grad_logvar: float


def beta_nll_loss(pred: CriticPrediction, target: float, beta: float = 1.0) -> BetaNLLTerms:
    """
    w * (1/2 log s2 + (y - mu)^2 / (2 s2)) com w = s2^beta constante na derivação.
    Gradientes em relação a mu e log s2.
    """
    if not math.isfinite(target):
        raise CriticError(f"alvo não finito: {target}")
    var = pred.variance
    residual = target - pred.mean
    weight = var ** beta
    return BetaNLLTerms(
        loss=weight * (0.5 * math.log(var) + residual ** 2 / (2.0 * var)),
        grad_mean=weight * (-residual / var),
        grad_logvar=weight * (0.5 - residual ** 2 / (2.0 * var)),
    )


def beta_nll_torch(mean: torch.Tensor, logvar: torch.Tensor, target: torch.Tensor,
                   beta: float = 1.0) -> torch.Tensor:
    """Versão por amostra em torch; beta = 0 é a NLL gaussiana."""
    var = logvar.exp()
    nll = 0.5 * logvar + (target - mean) ** 2 / (2.0 * var)
    if beta > 0:
        nll = nll * var.detach() ** beta
    return nll


# =============================================================================
# CRÍTICO TREINADO
# =============================================================================

@dataclass
class CriticExample:
    """Interação observada usada no treino: (contexto, item, sinal)."""

    context: Context
    item: int
    target: float


class Critic:
    """Rede treinada mais a tabela fixa de embeddings, em modo de inferência."""

    def __init__(self, module: InteractionCritic, embeddings: EmbeddingTable, history_window: int = 10):
        self.module = module.eval()
        self.embeddings = embeddings
        self.history_window = history_window

    def predict_many(self, ctx: Context, items: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        """(médias, variâncias) para os itens no contexto."""
        if not items:
            return np.zeros(0), np.zeros(0)
        summary, flags = history_summary(ctx.history, self.embeddings, self.history_window)
        n = len(items)
        with torch.no_grad():
            mean, logvar = self.module(
                torch.from_numpy(np.tile(summary, (n, 1))),
                torch.full((n,), flags, dtype=torch.bool),
                torch.from_numpy(self.embeddings.vectors(items)),
            )
        return mean.numpy().copy(), logvar.exp().numpy().copy()

    def predict(self, ctx: Context, item: int) -> CriticPrediction:
        means, variances = self.predict_many(ctx, [item])
        return CriticPrediction(mean=float(means[0]), variance=float(variances[0]))


def _tensors(examples: Sequence[CriticExample], embeddings: EmbeddingTable, history_window: int):
    summaries, flags = zip(*(history_summary(e.context.history, embeddings, history_window)
                             for e in examples))
    return (
        torch.from_numpy(np.stack(summaries)),
        torch.tensor(flags, dtype=torch.bool),
        torch.from_numpy(embeddings.vectors([e.item for e in examples])),
        torch.tensor([e.target for e in examples], dtype=torch.float64),
    )


def _pearson(x: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    if x.size < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0, 1.0
    result = stats.pearsonr(x, y)
    return float(result[0]), float(result[1])


def calibration_report(means: np.ndarray, variances: np.ndarray, targets: np.ndarray,
                       epoch_best: int) -> CalibrationReport:
    errors = targets - means
    pearson_mean, p_mean = _pearson(means, targets)
    pearson_var, p_var = _pearson(variances, errors ** 2)
    return CalibrationReport(
        mse=float(np.mean(errors ** 2)),
        mae=float(np.mean(np.abs(errors))),
        pearson_mean=pearson_mean,
        pearson_var=pearson_var,
        epoch_best=epoch_best,
        pearson_mean_p=p_mean,
        pearson_var_p=p_var,
    )


def _split_indices(n: int, ratios: Tuple[float, float, float], seed: int):
    order = np.random.default_rng(seed).permutation(n)
    n_train = max(1, int(round(ratios[0] * n)))
    n_val = max(1, min(int(round(ratios[1] * n)), n - n_train - 1))
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


def train_critic(examples: Sequence[CriticExample], embeddings: EmbeddingTable,
                 spec: Optional[CriticSpec] = None, seed: int = 0,
                 history_window: int = 10) -> Tuple[Critic, CalibrationReport]:
    """
    Descida de gradiente em mini-lotes (SGD com momento) pelas épocas configuradas;
    devolve o checkpoint de menor MSE de validação e o relatório no conjunto de teste.
    """
    spec = spec or CriticSpec()
    if len(examples) < 3:
        raise CriticError("crítico exige ao menos 3 interações para treino/validação/teste")

    summary, flags, items, targets = _tensors(examples, embeddings, history_window)
    train_idx, val_idx, test_idx = _split_indices(len(examples), spec.split_ratios, seed)
    if test_idx.size == 0:
        test_idx = val_idx

    torch.manual_seed(seed)
    module = InteractionCritic(embeddings.dim, spec.hidden_dim, spec.dropout).double()
    optimizer = torch.optim.SGD(module.parameters(), lr=spec.learning_rate, momentum=spec.momentum)
    train_idx_t = torch.from_numpy(train_idx)
    loader = DataLoader(
        TensorDataset(summary[train_idx_t], flags[train_idx_t], items[train_idx_t], targets[train_idx_t]),
        batch_size=spec.batch_size,
        shuffle=True,
        generator=torch.Generator().manual_seed(seed),
    )

    def evaluate(indices: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        idx = torch.from_numpy(indices)
        module.eval()
        with torch.no_grad():
            mean, logvar = module(summary[idx], flags[idx], items[idx])
        return mean.numpy(), logvar.exp().numpy()

    logger.info(f"Treinando crítico: {len(train_idx)} treino, {len(val_idx)} validação, "
                f"{len(test_idx)} teste, {spec.epochs} épocas")
    best_mse = math.inf
    best_state = copy.deepcopy(module.state_dict())
    best_epoch = 0
    for epoch in range(1, spec.epochs + 1):
        module.train()
        for batch, (b_summary, b_flags, b_items, b_targets) in enumerate(loader):
            mean, logvar = module(b_summary, b_flags, b_items)
            loss = beta_nll_torch(mean, logvar, b_targets, spec.beta).mean()
            if not torch.isfinite(loss):
                raise DivergenceError("perda do crítico não finita",
                                      {"epoch": epoch, "batch": batch, "lr": spec.learning_rate})
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        critic_epochs_total.inc()

        val_mean, _ = evaluate(val_idx)
        val_mse = float(np.mean((targets.numpy()[val_idx] - val_mean) ** 2))
        logger.debug(f"Época {epoch}: MSE de validação {val_mse:.6f}")
        if val_mse < best_mse:
            best_mse, best_epoch = val_mse, epoch
            best_state = copy.deepcopy(module.state_dict())

    module.load_state_dict(best_state)
    test_mean, test_var = evaluate(test_idx)
    report = calibration_report(test_mean, test_var, targets.numpy()[test_idx], best_epoch)
    logger.info(f"Crítico treinado: melhor época {best_epoch}, MSE {report.mse:.5f}, "
                f"Pearson média {report.pearson_mean:.3f}, Pearson variância {report.pearson_var:.3f}")
    return Critic(module, embeddings, history_window), report


# =============================================================================
# IMPUTAÇÃO
# =============================================================================

class RewardPredictor(Protocol):
    def predict_many(self, ctx: Context, items: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        ...


def imputed_gain(signal_kind: SignalKind, mean: float, variance: float) -> Tuple[float, float]:
    """Ganho e variância do ganho para um sinal previsto (método delta para ratings)."""
    if signal_kind == SignalKind.WATCH_RATIO:
        return max(mean, 0.0), variance
    rating = min(max(mean, 1.0), 5.0)
    gain = 2.0 ** rating - 1.0
    return gain, (math.log(2.0) * 2.0 ** rating) ** 2 * variance


def impute_rewards(predictor: RewardPredictor, ctx: Context, ranking: Ranking,
                   observed: Mapping[int, float],
                   signal_kind: SignalKind = SignalKind.WATCH_RATIO) -> Tuple[np.ndarray, np.ndarray]:
    """Ganhos e variâncias na ordem do ranking; itens observados nunca são substituídos."""
    missing = [item for item in ranking.items if item not in observed]
    means, variances = predictor.predict_many(ctx, missing)
    predicted = {item: imputed_gain(signal_kind, float(m), float(v))
                 for item, m, v in zip(missing, means, variances)}

    gains: List[float] = []
    gain_vars: List[float] = []
    for item in ranking.items:
        if item in observed:
            gains.append(interest_gain(signal_kind, observed[item]))
            gain_vars.append(0.0)
        else:
            gain, var = predicted[item]
            gains.append(gain)
            gain_vars.append(var)
    return np.array(gains), np.array(gain_vars)


# =============================================================================
# CHECKPOINT
# =============================================================================

def save_critic(critic: Critic, path: Union[str, Path]):
    """Cabeçalho `NRCRT1 D hidden dropout H` seguido dos parâmetros em float64."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    module = critic.module
    header = (f"{runtime.CRITIC_CHECKPOINT_TAG} {module.embedding_dim} {module.hidden_dim} "
              f"{module.dropout!r} {critic.history_window}\n")
    vector = parameters_to_vector(module.parameters()).detach().numpy().astype("<f8")
    with path.open("wb") as handle:
        handle.write(header.encode("ascii"))
        handle.write(vector.tobytes())


def load_critic(path: Union[str, Path], embeddings: EmbeddingTable) -> Critic:
    path = Path(path)
    header, sep, body = path.read_bytes().partition(b"\n")
    parts = header.decode("ascii", errors="replace").split()
    if not sep or len(parts) != 5 or parts[0] != runtime.CRITIC_CHECKPOINT_TAG:
        raise DataFormatError(f"{path}: cabeçalho de checkpoint do crítico inválido", line_number=1)
    dim, hidden, dropout, window = int(parts[1]), int(parts[2]), float(parts[3]), int(parts[4])
    if dim != embeddings.dim:
        raise DataFormatError(f"{path}: dimensão {dim} difere dos embeddings ({embeddings.dim})")
    module = InteractionCritic(dim, hidden, dropout).double()
    vector = torch.from_numpy(np.frombuffer(body, dtype="<f8").astype(np.float64))
    expected = sum(p.numel() for p in module.parameters())
    if vector.numel() != expected:
        raise DataFormatError(f"{path}: esperado {expected} parâmetros, encontrado {vector.numel()}")
    vector_to_parameters(vector, module.parameters())
    return Critic(module, embeddings, window)
