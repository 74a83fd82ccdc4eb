"""
Serviço de dados: ingestão de logs de interação, divisões por usuário,
subamostragem, geração de candidatos por similaridade e formatos de arquivo.
"""

import io
import math
from pathlib import Path
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..core.errors import DataFormatError
from ..core.logging import get_logger
from ..models import (
    EmbeddingTable,
    EsciLabel,
    HistoryEntry,
    INTERACTION_COLUMNS,
    InteractionLog,
    RelevanceTable,
    SignalKind,
)

logger = get_logger("data_service")

PathLike = Union[str, Path]


# =============================================================================
# CONSULTA E CANDIDATOS
# =============================================================================

def query_embedding(history: Sequence[HistoryEntry], embeddings: EmbeddingTable,
                    history_window: int = 10, discount: float = 0.9,
                    signal_weighting: bool = True) -> np.ndarray:
    """
    Média descontada no tempo dos embeddings dos H itens mais recentes,
    opcionalmente ponderada pelo sinal, renormalizada para norma 1.
    """
    if not history:
        raise ValueError("histórico vazio: não há consulta para recuperar candidatos")
    recent = list(history)[-history_window:]
    h = len(recent)
    vectors = embeddings.vectors([entry.item_id for entry in recent])
    decay = discount ** np.arange(h - 1, -1, -1, dtype=float)

    if signal_weighting:
        weights = decay * np.array([entry.signal for entry in recent], dtype=float)
        query = weights @ vectors
        if np.linalg.norm(query) == 0.0:
            logger.debug("Sinais nulos no histórico; usando média sem ponderação")
            query = decay @ vectors
    else:
        query = decay @ vectors

    norm = np.linalg.norm(query)
    if norm == 0.0:
        raise ValueError("consulta com norma zero")
    return query / norm


def retrieve_candidates(history: Sequence[HistoryEntry], embeddings: EmbeddingTable,
                        history_window: int = 10, n_candidates: int = 30,
                        discount: float = 0.9, signal_weighting: bool = True) -> List[int]:
    """Top-C itens do catálogo por cosseno com a consulta, excluindo o histórico."""
    query = query_embedding(history, embeddings, history_window, discount, signal_weighting)
    excluded = {entry.item_id for entry in history}

    keep = np.array([int(item) not in excluded for item in embeddings.item_ids])
    if keep.sum() < n_candidates:
        raise ValueError(
            f"catálogo com {int(keep.sum())} itens após exclusão, menor que C={n_candidates}"
        )
    item_ids = embeddings.item_ids[keep]
    sims = embeddings.matrix[keep] @ query
    # Empates resolvidos por item_id crescente
    order = np.lexsort((item_ids, -sims))
    return [int(item) for item in item_ids[order[:n_candidates]]]


# =============================================================================
# SUBAMOSTRAGEM E DIVISÕES
# =============================================================================

def subsample_per_user(log: InteractionLog, fraction: float,
                       rng: np.random.Generator) -> InteractionLog:
    """Mantém ceil(fraction * n_u) interações uniformes de cada usuário."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fração deve estar em (0, 1]: {fraction}")
    if fraction == 1 or not len(log):
        return InteractionLog(log.frame.copy())

    kept: List[np.ndarray] = []
    for _, group in log.frame.groupby("user_id", sort=True):
        n = len(group)
        size = max(1, math.ceil(fraction * n - 1e-9))
        chosen = np.sort(rng.choice(n, size=size, replace=False))
        kept.append(group.index.to_numpy()[chosen])
    rows = np.sort(np.concatenate(kept))
    return InteractionLog(log.frame.loc[rows])


def split_user_ids(users: Sequence[int], rng: np.random.Generator,
                   ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)) -> Tuple[List[int], List[int], List[int]]:
    """Partição disjunta de usuários em treino/validação/teste."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise ValueError(f"proporções inválidas: {ratios}")
    ordered = np.array(sorted(users), dtype=np.int64)
    permuted = ordered[rng.permutation(len(ordered))]
    n = len(permuted)
    n_train = int(round(ratios[0] * n))
    n_val = min(int(round(ratios[1] * n)), n - n_train)
    train = sorted(int(u) for u in permuted[:n_train])
    val = sorted(int(u) for u in permuted[n_train:n_train + n_val])
    test = sorted(int(u) for u in permuted[n_train + n_val:])
    return train, val, test


def split_users(log: InteractionLog, rng: np.random.Generator,
                ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)) -> Tuple[InteractionLog, InteractionLog, InteractionLog]:
    """Três logs com conjuntos de usuários disjuntos."""
    train, val, test = split_user_ids(log.users, rng, ratios)
    return log.for_users(train), log.for_users(val), log.for_users(test)


# =============================================================================
# FORMATOS DE ARQUIVO
# =============================================================================

def save_interactions(log: InteractionLog, path: PathLike):
    """CSV com cabeçalho fixo, UTF-8 e quebras de linha LF."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    log.frame.to_csv(path, index=False, lineterminator="\n", float_format="%.17g",
                     encoding="utf-8")


def _read_text(path: Path) -> str:
    """Conteúdo UTF-8; bytes inválidos viram DataFormatError na linha em que aparecem."""
    raw = path.read_bytes()
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise DataFormatError(f"{path}: conteúdo não é UTF-8 válido ({e.reason})",
                              line_number=raw.count(b"\n", 0, e.start) + 1) from None


def _numbered_lines(path: Path) -> Tuple[List[str], List[int]]:
    """Linhas não vazias e seus números no arquivo original, a partir de 1."""
    lines: List[str] = []
    numbers: List[int] = []
    for number, line in enumerate(_read_text(path).split("\n"), start=1):
        line = line.rstrip("\r")
        if line.strip():
            lines.append(line)
            numbers.append(number)
    return lines, numbers


def _read_table(path: Path, lines: Sequence[str], **kwargs) -> pd.DataFrame:
    try:
        return pd.read_csv(io.StringIO("\n".join(lines) + "\n"), dtype=str, keep_default_na=False,
                           **kwargs)
    except pd.errors.ParserError as e:
        raise DataFormatError(f"{path}: {e}") from e


def _float_or_nan(text) -> float:
    # float() arredonda corretamente: o que foi gravado com 17 dígitos volta idêntico
    try:
        return float(text)
    except (TypeError, ValueError):
        return math.nan


def _int_or_none(text) -> Optional[int]:
    try:
        return int(text)
    except (TypeError, ValueError):
        return None


def _first_bad_row(mask: pd.Series) -> int:
    return int(np.flatnonzero(mask.to_numpy())[0])


def load_interactions(path: PathLike) -> InteractionLog:
    """Carrega um log de interações; linhas malformadas geram erro com o número da linha."""
    path = Path(path)
    lines, numbers = _numbered_lines(path)
    if not lines:
        raise DataFormatError(f"{path}: arquivo vazio, cabeçalho ausente", line_number=1)
    frame = _read_table(path, lines)
    if list(frame.columns) != INTERACTION_COLUMNS:
        raise DataFormatError(f"{path}: cabeçalho esperado {','.join(INTERACTION_COLUMNS)}",
                              line_number=numbers[0])
    if frame.empty:
        return InteractionLog.empty()

    def reject(mask: pd.Series, column: str, reason: str):
        row = _first_bad_row(mask)
        raise DataFormatError(f"{path}: {reason} em {column}: {frame[column].iloc[row]!r}",
                              line_number=numbers[row + 1])

    typed = pd.DataFrame({"signal_kind": frame["signal_kind"]})
    for column in ("user_id", "item_id", "timestamp"):
        typed[column] = frame[column].map(_int_or_none)
        if typed[column].isna().any():
            reject(typed[column].isna(), column, "inteiro inválido")
    typed["signal_value"] = frame["signal_value"].map(_float_or_nan).astype("float64")
    if not np.isfinite(typed["signal_value"]).all():
        reject(~np.isfinite(typed["signal_value"]), "signal_value", "valor não finito")

    kind = typed["signal_kind"]
    valid_kinds = {k.value for k in SignalKind}
    if not kind.isin(valid_kinds).all():
        reject(~kind.isin(valid_kinds), "signal_kind", "tipo de sinal desconhecido")
    if (kind != kind.iloc[0]).any():
        reject(kind != kind.iloc[0], "signal_kind", "tipo de sinal diferente do restante do log")

    typed = typed.astype({"user_id": "int64", "item_id": "int64", "timestamp": "int64"})
    if (typed["timestamp"] < 0).any():
        reject(typed["timestamp"] < 0, "timestamp", "timestamp negativo")
    value = typed["signal_value"]
    out_of_range = ((kind == SignalKind.WATCH_RATIO.value) & (value < 0)) | (
        (kind == SignalKind.RATING.value) & ~value.isin([1.0, 2.0, 3.0, 4.0, 5.0]))
    if out_of_range.any():
        reject(out_of_range, "signal_value", "sinal fora do domínio (watch ratio >= 0, rating 1..5)")

    return InteractionLog(typed[INTERACTION_COLUMNS])


def save_embeddings(table: EmbeddingTable, path: PathLike):
    """Cabeçalho `dim=<D>` seguido de `item_id<TAB>v1<TAB>...<TAB>vD`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(table.matrix)
    frame.insert(0, "item_id", table.item_ids)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        handle.write(f"dim={table.dim}\n")
        frame.to_csv(handle, sep="\t", header=False, index=False, lineterminator="\n",
                     float_format="%.17g")


def load_embeddings(path: PathLike) -> EmbeddingTable:
    path = Path(path)
    lines, numbers = _numbered_lines(path)
    if not lines or not lines[0].startswith("dim="):
        raise DataFormatError(f"{path}: cabeçalho dim=<D> ausente",
                              line_number=numbers[0] if numbers else 1)
    try:
        dim = int(lines[0][4:])
    except ValueError:
        raise DataFormatError(f"{path}: dimensão inválida {lines[0]!r}", line_number=numbers[0]) from None
    if len(lines) == 1:
        raise DataFormatError(f"{path}: nenhum vetor encontrado", line_number=numbers[0] + 1)

    frame = _read_table(path, lines[1:], sep="\t", header=None)
    if frame.shape[1] != dim + 1:
        raise DataFormatError(f"{path}: esperado {dim + 1} colunas, encontrado {frame.shape[1]}",
                              line_number=numbers[1])
    item_ids = frame[0].map(_int_or_none)
    values = frame.iloc[:, 1:].map(_float_or_nan).to_numpy(dtype=float)
    bad = item_ids.isna().to_numpy() | ~np.isfinite(values).all(axis=1)
    if bad.any():
        raise DataFormatError(f"{path}: valor não numérico",
                              line_number=numbers[int(np.flatnonzero(bad)[0]) + 1])
    try:
        return EmbeddingTable(dim=dim, item_ids=item_ids.to_numpy(dtype=np.int64), matrix=values)
    except ValueError as e:
        raise DataFormatError(f"{path}: {e}") from e


def save_topics(topics: Mapping[int, FrozenSet[str]], path: PathLike):
    """`item_id<TAB>topic1,topic2,...` com tópicos em ordem alfabética."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for item in sorted(topics):
            handle.write(f"{item}\t{','.join(sorted(topics[item]))}\n")


def load_topics(path: PathLike) -> Dict[int, FrozenSet[str]]:
    path = Path(path)
    lines, numbers = _numbered_lines(path)
    if not lines:
        return {}
    frame = _read_table(path, lines, sep="\t", header=None, names=["item_id", "topics"])
    topics: Dict[int, FrozenSet[str]] = {}
    for row, (item, names) in enumerate(zip(frame["item_id"], frame["topics"])):
        item_id = _int_or_none(item)
        if item_id is None:
            raise DataFormatError(f"{path}: item_id inválido {item!r}", line_number=numbers[row])
        names = names if isinstance(names, str) else ""
        topics[item_id] = frozenset(t for t in names.split(",") if t)
    return topics


def load_esci_labels(path: PathLike) -> Dict[int, Dict[int, EsciLabel]]:
    """`user_id<TAB>item_id<TAB>label` -> {user_id: {item_id: rótulo}}."""
    path = Path(path)
    lines, numbers = _numbered_lines(path)
    if not lines:
        return {}
    frame = _read_table(path, lines, sep="\t", header=None, names=["user_id", "item_id", "label"])
    labels: Dict[int, Dict[int, EsciLabel]] = {}
    for row, (user, item, label) in enumerate(frame.itertuples(index=False)):
        try:
            labels.setdefault(int(user), {})[int(item)] = EsciLabel(label)
        except (TypeError, ValueError):
            raise DataFormatError(f"{path}: linha ESCI inválida", line_number=numbers[row]) from None
    return labels


def load_external_rankings(path: PathLike) -> Dict[str, List[int]]:
    """`context_id<TAB>item,item,...` -> listas ranqueadas possivelmente inválidas."""
    path = Path(path)
    rankings: Dict[str, List[int]] = {}
    for line, line_number in zip(*_numbered_lines(path)):
        context_id, _, items = line.partition("\t")
        try:
            rankings[context_id] = [int(tok) for tok in items.split(",") if tok.strip()]
        except ValueError:
            raise DataFormatError(f"{path}: item_id não inteiro", line_number=line_number) from None
    return rankings


def save_relevance_table(table: RelevanceTable, path: PathLike):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for line in table.to_lines():
            handle.write(line + "\n")


def load_relevance_table(path: PathLike) -> RelevanceTable:
    path = Path(path)
    gains: Dict[int, float] = {}
    for line, line_number in zip(*_numbered_lines(path)):
        item, _, gain = line.strip().partition("\t")
        item_id, value = _int_or_none(item), _float_or_nan(gain)
        if item_id is None or not math.isfinite(value) or value < 0:
            raise DataFormatError(f"{path}: linha de relevância inválida", line_number=line_number)
        gains[item_id] = value
    return RelevanceTable(gains=gains)
