"""
Hierarquia de exceções do needrank.
Erros de pré-condição das funções numéricas herdam de ValueError para que
chamadores possam capturar qualquer um dos dois.
"""

from typing import Any, Dict, Optional


def format_error_line(kind: str, message: str) -> str:
    """Linha única `error=<Tipo> message="..."`, sem aspas duplas nem quebras na mensagem."""
    message = message.replace('"', "'").replace("\n", " ")
    return f'error={kind} message="{message}"'


class NeedRankError(Exception):
    """Erro base do needrank."""

    kind: str = "NeedRankError"
    exit_code: int = 1

    def to_line(self) -> str:
        """Linha única, legível por máquina, para stderr."""
        return format_error_line(self.kind, str(self))


class ConfigError(NeedRankError, ValueError):
    """Configuração de experimento inválida."""

    kind = "ConfigError"
    exit_code = 2


class DataFormatError(NeedRankError, ValueError):
    """Arquivo de dados malformado."""

    kind = "DataFormatError"
    exit_code = 2

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"linha {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class RankingError(NeedRankError, ValueError):
    """Ranking ou índice de posição inválido."""

    kind = "RankingError"


class RewardError(NeedRankError, ValueError):
    """Entradas inválidas para cálculo de recompensa ou vantagem."""

    kind = "RewardError"


class PolicyError(NeedRankError, ValueError):
    """Parâmetros ou rollouts de política inconsistentes."""

    kind = "PolicyError"


class CriticError(NeedRankError, ValueError):
    """Entradas inválidas para o crítico."""

    kind = "CriticError"


class DivergenceError(NeedRankError, RuntimeError):
    """Perda não finita durante o treinamento."""

    kind = "DivergenceError"

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        if self.diagnostics:
            details = ", ".join(f"{k}={v}" for k, v in sorted(self.diagnostics.items()))
            message = f"{message} ({details})"
        super().__init__(message)
