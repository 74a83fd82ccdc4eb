"""
Métricas Prometheus para monitoramento dos experimentos.
Contadores de trabalho numérico, duração de passos e uso de memória.
"""

import functools
import os
import time
from pathlib import Path
from typing import Callable

import psutil
from prometheus_client import REGISTRY, Counter, Gauge, Histogram, write_to_textfile


# Métricas de recompensa
swap_evaluations_total = Counter(
    'needrank_swap_evaluations_total',
    'Total de avaliações de troca contrafactual',
    ['variant']
)

invalid_items_total = Counter(
    'needrank_invalid_items_total',
    'Itens inválidos ou duplicados descartados antes do preenchimento'
)

# Métricas de política
rollouts_sampled_total = Counter(
    'needrank_rollouts_sampled_total',
    'Total de rollouts amostrados'
)

policy_updates_total = Counter(
    'needrank_policy_updates_total',
    'Total de passos de gradiente aplicados à política'
)

train_step_seconds = Histogram(
    'needrank_train_step_seconds',
    'Duração de um passo de treinamento em segundos'
)

# Métricas do crítico
critic_epochs_total = Counter(
    'needrank_critic_epochs_total',
    'Total de épocas de treinamento do crítico'
)

# Métricas de sistema
process_memory_bytes = Gauge(
    'needrank_process_memory_bytes',
    'Uso de memória do processo em bytes'
)


def record_swap_evaluations(variant: str, count: int):
    """Incrementa o contador de avaliações de troca de uma variante."""
    if count > 0:
        swap_evaluations_total.labels(variant=variant).inc(count)


def swap_evaluation_count(variant: str) -> float:
    """Valor atual do contador de trocas (0 se a variante nunca foi usada)."""
    value = REGISTRY.get_sample_value(
        'needrank_swap_evaluations_total', {'variant': variant}
    )
    return value or 0.0


def record_invalid_items(count: int):
    """Incrementa o contador de itens inválidos descartados."""
    if count > 0:
        invalid_items_total.inc(count)


def track_duration(histogram: Histogram):
    """
    Decorador para registrar a duração de uma função em um histograma.
    """
    def decorator(func: Callable):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            try:
                return func(*args, **kwargs)
            finally:
                histogram.observe(time.perf_counter() - start_time)
        return wrapper
    return decorator


def update_system_metrics():
    """Atualiza a métrica de memória do processo."""
    process = psutil.Process(os.getpid())
    process_memory_bytes.set(process.memory_info().rss)


def export_metrics(path: Path):
    """Grava o registro no formato de exposição de texto."""
    update_system_metrics()
    path.parent.mkdir(parents=True, exist_ok=True)
    write_to_textfile(str(path), REGISTRY)
