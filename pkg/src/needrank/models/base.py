"""
Definições de modelo base para o needrank.
Fornece a configuração comum dos modelos pydantic imutáveis do domínio.
"""

from pydantic import BaseModel, ConfigDict


class FrozenModel(BaseModel):
    """Modelo base imutável, sem campos extras."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    def to_dict(self) -> dict:
        """Converter instância do modelo para dicionário."""
        return self.model_dump()
