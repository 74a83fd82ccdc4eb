"""
Testes para os módulos de núcleo: erros, logging, métricas e monitoramento.
"""

import logging

import numpy as np
import pytest
from prometheus_client import REGISTRY

from needrank.core.errors import (
    ConfigError,
    DataFormatError,
    DivergenceError,
    NeedRankError,
    RankingError,
)
from needrank.core.logging import get_logger, logger_instance, set_level
from needrank.core.metrics import (
    export_metrics,
    record_invalid_items,
    record_swap_evaluations,
    swap_evaluation_count,
    track_duration,
    train_step_seconds,
)
from needrank.core.monitoring import RunMonitor


@pytest.mark.unit
class TestErrors:
    """Testes da hierarquia de exceções."""

    def test_error_line(self):
        """Linha única com tipo e mensagem sem aspas duplas."""
        error = ConfigError('campo "seed" inválido\nsegunda linha')
        assert error.to_line() == "error=ConfigError message=\"campo 'seed' inválido segunda linha\""

    def test_exit_codes(self):
        """Configuração e dados saem com 2; execução com 1."""
        assert ConfigError("x").exit_code == 2
        assert DataFormatError("x").exit_code == 2
        assert RankingError("x").exit_code == 1
        assert DivergenceError("x").exit_code == 1

    def test_precondition_errors_are_value_errors(self):
        """Erros de pré-condição também são ValueError."""
        assert issubclass(RankingError, ValueError)
        assert issubclass(DataFormatError, NeedRankError)
        assert issubclass(DivergenceError, RuntimeError)

    def test_data_format_line_number(self):
        """Número da linha entra na mensagem."""
        error = DataFormatError("valor inválido", line_number=7)
        assert error.line_number == 7
        assert str(error) == "linha 7: valor inválido"

    def test_divergence_diagnostics(self):
        """Diagnósticos ordenados por chave."""
        error = DivergenceError("perda não finita", {"step": 3, "lr": 0.1})
        assert str(error) == "perda não finita (lr=0.1, step=3)"
        assert error.diagnostics == {"step": 3, "lr": 0.1}


@pytest.mark.unit
class TestLogging:
    """Testes do logger do pacote."""

    def test_child_logger_namespace(self):
        """Loggers de módulo ficam sob needrank."""
        child = get_logger("teste")
        assert child.name == "needrank.teste"
        assert child.propagate

    def test_root_logger_has_console_handler(self):
        """O logger raiz do pacote escreve no console e não propaga."""
        root = get_logger()
        assert root.name == "needrank"
        assert not root.propagate
        assert any(isinstance(h, logging.StreamHandler) for h in root.handlers)

    def test_set_level(self):
        """set_level ajusta o logger raiz."""
        root = logger_instance.get_logger()
        previous = root.level
        try:
            set_level("DEBUG")
            assert root.level == logging.DEBUG
        finally:
            root.setLevel(previous)


@pytest.mark.unit
class TestMetrics:
    """Testes das métricas Prometheus."""

    def test_swap_counter(self):
        """Contador por variante acumula avaliações."""
        before = swap_evaluation_count("variante_teste")
        record_swap_evaluations("variante_teste", 6)
        record_swap_evaluations("variante_teste", 0)
        assert swap_evaluation_count("variante_teste") == before + 6

    def test_invalid_items_counter(self):
        """Itens descartados são contados."""
        before = REGISTRY.get_sample_value("needrank_invalid_items_total") or 0.0
        record_invalid_items(3)
        assert REGISTRY.get_sample_value("needrank_invalid_items_total") == before + 3

    def test_track_duration(self):
        """Decorador observa uma amostra por chamada, mesmo com exceção."""
        before = REGISTRY.get_sample_value("needrank_train_step_seconds_count") or 0.0

        @track_duration(train_step_seconds)
        def falha():
            raise RuntimeError("erro")

        with pytest.raises(RuntimeError):
            falha()
        assert REGISTRY.get_sample_value("needrank_train_step_seconds_count") == before + 1

    def test_export(self, tmp_path):
        """Exportação em texto contém as métricas do pacote."""
        path = tmp_path / "sub" / "metrics.prom"
        export_metrics(path)
        text = path.read_text()
        assert "needrank_swap_evaluations_total" in text
        assert "needrank_process_memory_bytes" in text


@pytest.mark.unit
class TestRunMonitor:
    """Testes do monitor de execução."""

    def test_check_finite(self):
        """Detecta NaN e infinito."""
        assert RunMonitor.check_finite([np.zeros(3), np.ones((2, 2))])
        assert not RunMonitor.check_finite([np.zeros(3), np.array([1.0, np.nan])])

    def test_report(self):
        """Relatório com passo, saúde e recursos."""
        status = RunMonitor().report(5, [np.zeros(2)])
        assert status["step"] == 5
        assert status["healthy"] is True
        assert "uptime" in status

    def test_report_unhealthy(self):
        """Parâmetros não finitos marcam a execução como não saudável."""
        assert RunMonitor().report(1, [np.array([np.inf])])["healthy"] is False

    def test_uptime_format(self, mocker):
        """Tempo de atividade em horas, minutos e segundos."""
        monitor = RunMonitor()
        mocker.patch("needrank.core.monitoring.time.time", return_value=monitor.start_time + 3725)
        assert monitor.get_uptime() == "1h 2m 5s"
