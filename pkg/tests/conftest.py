"""
Configuração compartilhada para testes.
Fornece fixtures e configurações comuns.
"""

import os
import sys

import numpy as np
import pytest

# Logs só no console durante os testes
os.environ.setdefault("LOG_TO_FILE", "false")
os.environ.setdefault("LOG_LEVEL", "WARNING")

# Adicionar src ao path para imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from needrank.models import (  # noqa: E402
    Context,
    EmbeddingTable,
    HistoryEntry,
    InteractionLog,
    InteractionRecord,
    NeedKind,
    RelevanceTable,
    SignalKind,
)
from needrank.schemas import parse_config  # noqa: E402

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "golden")

QUERY_TIME = 100_000


@pytest.fixture
def rng():
    """Gerador semeado para cada teste."""
    return np.random.default_rng(1234)


@pytest.fixture
def toy_embeddings():
    """Embeddings 2D: histórico em (1, 0) e quatro candidatos com cossenos 1, 0.8, 0.6, -1."""
    return EmbeddingTable.from_vectors({
        1: [1.0, 0.0],
        2: [0.8, 0.6],
        3: [0.6, 0.8],
        4: [-1.0, 0.0],
        10: [1.0, 0.0],
    })


@pytest.fixture
def toy_topics():
    """Tópicos: histórico em 'a'; candidato 2 é o único de nicho."""
    return {
        1: frozenset({"a"}),
        2: frozenset({"b"}),
        3: frozenset(),
        4: frozenset({"a", "b"}),
        10: frozenset({"a"}),
    }


def make_context(need: NeedKind, candidates=(1, 2, 3, 4), context_id: str = "u0") -> Context:
    return Context(
        context_id=context_id,
        user_id=0,
        history=(HistoryEntry(item_id=10, signal=1.0, timestamp=QUERY_TIME),),
        candidates=tuple(candidates),
        need=need,
    )


@pytest.fixture
def four_candidate_context():
    """Contexto de quatro candidatos com a necessidade padrão."""
    return make_context(NeedKind.max_interest())


@pytest.fixture
def toy_trend_log():
    """Interações na janela de um dia antes de QUERY_TIME: 3, 1, 0 e 2 por candidato."""
    stamps = {
        1: [QUERY_TIME, 50_000, 13_601],
        2: [99_999, QUERY_TIME - 86_400],
        3: [1_000],
        4: [20_000, 30_000],
    }
    records = [
        InteractionRecord(user_id=9, item_id=item, timestamp=t,
                          signal_kind=SignalKind.WATCH_RATIO, signal_value=1.0)
        for item, times in stamps.items() for t in times
    ]
    return InteractionLog.from_records(records)


@pytest.fixture
def relevance_321():
    """Ganhos (3, 2, 1) nos itens 1, 2, 3."""
    return RelevanceTable(gains={1: 3.0, 2: 2.0, 3: 1.0})


def tiny_config_payload(**overrides) -> dict:
    payload = {
        "seed": 7,
        "data": {
            "synthetic": {
                "n_users": 40,
                "n_items": 40,
                "latent_dim": 4,
                "sparsity": 0.5,
                "n_topics": 4,
            },
            "n_candidates": 10,
        },
        "policy": {"n_strategies": 2, "projection_dim": 2},
        "trainer": {
            "group_size": 4,
            "contexts_per_batch": 2,
            "steps": 3,
            "eval_every": 1,
        },
        "critic": {"hidden_dim": 16, "epochs": 2, "batch_size": 32},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(payload.get(key), dict):
            payload[key] = {**payload[key], **value}
        else:
            payload[key] = value
    return payload


@pytest.fixture
def tiny_config():
    """Experimento sintético pequeno (40 usuários, 40 itens, 10 candidatos)."""
    return parse_config(tiny_config_payload())


@pytest.fixture(scope="session")
def tiny_env():
    """Ambiente montado uma vez por sessão a partir da configuração pequena."""
    from needrank.services.environment_service import build_environment

    return build_environment(parse_config(tiny_config_payload()))
