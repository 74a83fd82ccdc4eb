"""
Monitoramento de execuções de treinamento.
Inclui tempo de atividade, recursos do sistema e checagem numérica de parâmetros.
"""

import time
from datetime import datetime, timedelta
from typing import Any, Dict, Iterable

import numpy as np
import psutil

from .logging import get_logger

logger = get_logger("monitoring")


class RunMonitor:
    """Verificador de saúde de uma execução."""

    def __init__(self):
        self.start_time = time.time()
        self.last_check = None

    def check_system_resources(self) -> Dict[str, Any]:
        """Verificar recursos do sistema."""
        try:
            memory = psutil.virtual_memory()
            process = psutil.Process()
            return {
                "cpu_percent": psutil.cpu_percent(interval=None),
                "memory_percent": memory.percent,
                "process_rss": process.memory_info().rss,
            }
        except psutil.Error as e:
            logger.error(f"Erro ao verificar recursos do sistema: {e}")
            return {"error": str(e)}

    @staticmethod
    def check_finite(arrays: Iterable[np.ndarray]) -> bool:
        """Todos os arrays contêm apenas valores finitos."""
        return all(bool(np.all(np.isfinite(a))) for a in arrays)

    def get_uptime(self) -> str:
        """Obter tempo de atividade da execução."""
        uptime = timedelta(seconds=int(time.time() - self.start_time))

        hours, remainder = divmod(uptime.seconds, 3600)
        minutes, seconds = divmod(remainder, 60)
        hours += uptime.days * 24

        if hours > 0:
            return f"{hours}h {minutes}m {seconds}s"
        return f"{minutes}m {seconds}s"

    def report(self, step: int, arrays: Iterable[np.ndarray]) -> Dict[str, Any]:
        """Registrar um resumo de saúde no log."""
        self.last_check = datetime.now()
        healthy = self.check_finite(arrays)
        resources = self.check_system_resources()

        status = {
            "step": step,
            "uptime": self.get_uptime(),
            "healthy": healthy,
            **resources,
        }
        if healthy:
            logger.info(
                f"Passo {step}: tempo {status['uptime']}, "
                f"memória do processo {resources.get('process_rss', 0) / 1e6:.1f} MB"
            )
        else:
            logger.warning(f"Passo {step}: parâmetros com valores não finitos")
        return status
