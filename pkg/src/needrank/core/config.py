"""
Configurações de processo para o needrank.
Centraliza constantes e variáveis de ambiente que não pertencem a um experimento.
A configuração de experimento (ExperimentConfig) fica em schemas.py.
"""

import os

from dotenv import load_dotenv

# Carregar variáveis de ambiente
load_dotenv()


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).lower() == "true"


# =============================================================================
# CONFIGURAÇÃO DA APLICAÇÃO
# =============================================================================

class AppConfig:
    """Configuração geral da aplicação."""

    TITLE: str = "needrank - ranking condicionado a necessidades com GRPO"
    VERSION: str = "1.0.0"

    # Logs em nível DEBUG sem precisar de --verbose
    DEBUG: bool = _env_bool("DEBUG", "false")


# =============================================================================
# CONFIGURAÇÃO DE EXECUÇÃO
# =============================================================================

class RuntimeConfig:
    """Configuração de execução dos experimentos."""

    # Número de workers para amostragem de rollouts e cálculo de recompensas
    WORKERS: int = int(os.getenv("NEEDRANK_WORKERS", "1"))

    # Diretório de saída padrão quando --out não é informado
    DEFAULT_OUT_DIR: str = os.getenv("NEEDRANK_OUT_DIR", "runs/default")

    # Versões dos formatos de checkpoint
    POLICY_CHECKPOINT_TAG: str = "NRPOL1"
    CRITIC_CHECKPOINT_TAG: str = "NRCRT1"


# =============================================================================
# CONFIGURAÇÃO DE MÉTRICAS
# =============================================================================

class MetricsConfig:
    """Configuração da exportação de métricas Prometheus."""

    EXPORT_ENABLED: bool = _env_bool("NEEDRANK_METRICS_EXPORT", "true")
    EXPORT_FILENAME: str = "metrics.prom"


# =============================================================================
# CONFIGURAÇÃO DE LOGGING
# =============================================================================

class LoggingConfig:
    """Configuração de logging."""

    LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    FORMAT: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    # Arquivos de log
    LOG_TO_FILE: bool = _env_bool("LOG_TO_FILE", "true")
    LOG_FILE: str = os.getenv("LOG_FILE", "logs/needrank.log")
    ERROR_LOG_FILE: str = os.getenv("ERROR_LOG_FILE", "logs/error.log")


# =============================================================================
# INSTÂNCIAS
# =============================================================================

app = AppConfig()
runtime = RuntimeConfig()
metrics = MetricsConfig()
logging = LoggingConfig()
