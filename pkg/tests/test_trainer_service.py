"""
Testes de integração do serviço de treinamento e avaliação.
"""

import json

import numpy as np
import pandas as pd
import pytest

from needrank.core.config import runtime
from needrank.core.errors import ConfigError, DivergenceError, PolicyError
from needrank.models import AblationPreset, MetricReport, Ranking, RewardSource
from needrank.schemas import parse_config
from needrank.services import trainer_service
from needrank.services.trainer_service import (
    ABLATION_COLUMNS,
    EVAL_SUMMARY_COLUMNS,
    TRAIN_LOG_COLUMNS,
    RewardOracle,
    context_digest,
    evaluate_ranker,
    run_ablation,
    run_eval,
    run_gen_synthetic,
    run_make_needs,
    run_train,
    summarize_reports,
    write_csv,
)

from tests.conftest import tiny_config_payload


def _config(**overrides):
    return parse_config(tiny_config_payload(**overrides))


@pytest.mark.unit
class TestHelpers:
    """Testes das funções auxiliares de saída."""

    def test_write_csv_format(self, tmp_path):
        """Cabeçalho, 17 dígitos significativos e LF."""
        path = tmp_path / "out" / "tabela.csv"
        write_csv(pd.DataFrame({"a": [0.1, 2.0], "b": [1, 2]}), path)
        assert path.read_bytes() == b"a,b\n0.10000000000000001,1\n2,2\n"

    def test_context_digest(self):
        """Mesma sequência, mesmo resumo; ordem importa."""
        batches = [["u1", "u2"], ["u3"]]
        assert context_digest(batches) == context_digest([list(b) for b in batches])
        assert context_digest(batches) != context_digest(batches[::-1])
        assert len(context_digest(batches)) == 16

    def test_summarize_reports(self):
        """Média e erro padrão amostral por métrica."""
        reports = [
            MetricReport(context_id="a", ndcg5=1.0, ndcg10=1.0, ndcg30=1.0, recall5=1.0, mrr5=1.0, precision5=0.4),
            MetricReport(context_id="b", ndcg5=0.5, ndcg10=0.5, ndcg30=0.5, recall5=0.0, mrr5=0.0, precision5=0.0,
                         n_invalid_items=2),
        ]
        summary = summarize_reports(reports).set_index("metric")
        assert list(summarize_reports(reports).columns) == EVAL_SUMMARY_COLUMNS
        assert summary.loc["ndcg5", "mean"] == pytest.approx(0.75)
        assert summary.loc["ndcg5", "stderr"] == pytest.approx(0.25)
        assert summary.loc["n_invalid_items", "mean"] == pytest.approx(1.0)


@pytest.mark.integration
class TestRewardOracle:
    """Testes do oráculo de recompensas."""

    def test_ground_truth_lookup(self, tiny_env):
        """Ganhos verdadeiros na ordem do ranking e variância zero."""
        ctx = tiny_env.contexts("train")[0]
        oracle = RewardOracle(tiny_env, RewardSource.GROUND_TRUTH)
        ranking = Ranking.of(ctx.candidates[::-1], ctx.context_id)
        gains, variances = oracle.lookup(ctx, ranking)
        assert np.array_equal(gains, tiny_env.gains(ctx, ranking))
        assert np.all(variances == 0)

    def test_imputed_source_requires_predictor(self, tiny_env):
        """Fonte imputada sem preditor é erro de configuração."""
        with pytest.raises(ConfigError):
            RewardOracle(tiny_env, RewardSource.CRITIC)


@pytest.mark.integration
class TestRunTrain:
    """Testes do laço de treinamento."""

    def test_zero_steps(self, tiny_env, tmp_path):
        """steps=0 avalia apenas a política inicial uniforme."""
        config = _config(trainer={"steps": 0})
        result = run_train(config, tmp_path, env=tiny_env)
        log = pd.read_csv(tmp_path / "train_log.csv")
        assert list(log.columns) == TRAIN_LOG_COLUMNS
        assert len(log) == 1 and log["step"].iloc[0] == 0
        assert 0 <= log["val_ndcg5"].iloc[0] <= 1
        assert (tmp_path / "policy.ckpt").exists()
        assert np.all(result.params.score_weights == 0)

    def test_zero_learning_rate(self, tiny_env, tmp_path):
        """Sem movimento de parâmetros a validação não muda."""
        config = _config(trainer={"learning_rate": 0.0})
        result = run_train(config, tmp_path, env=tiny_env)
        assert len(result.train_log) == 4
        assert result.train_log["val_ndcg5"].nunique() == 1
        assert result.train_log["val_ndcg10"].nunique() == 1
        assert np.all(result.params.strategy_logits == 0)

    def test_log_rows(self, tiny_env, tmp_path):
        """Uma linha por passo com as métricas escalares preenchidas."""
        result = run_train(_config(), tmp_path, env=tiny_env)
        log = result.train_log
        assert log["step"].tolist() == [0, 1, 2, 3]
        assert log.loc[1:, "loss"].notna().all()
        assert (log.loc[1:, "mean_weight"] == 1.0).all()
        assert len(result.batches) == 3 and all(len(b) == 2 for b in result.batches)
        assert np.any(result.params.score_weights != 0)

    def test_byte_identical_logs(self, tiny_env, tmp_path):
        """Mesma configuração e semente produzem CSVs idênticos."""
        config = _config()
        run_train(config, tmp_path / "a", env=tiny_env)
        run_train(config, tmp_path / "b", env=tiny_env)
        assert (tmp_path / "a" / "train_log.csv").read_bytes() == (tmp_path / "b" / "train_log.csv").read_bytes()
        assert (tmp_path / "a" / "policy.ckpt").read_bytes() == (tmp_path / "b" / "policy.ckpt").read_bytes()

    def test_worker_count_does_not_change_results(self, tiny_env, tmp_path, mocker):
        """Número de workers não altera o log."""
        config = _config(uncertainty=False, advantage_mode="sequence_level")
        run_train(config, tmp_path / "serial", env=tiny_env)
        mocker.patch.object(runtime, "WORKERS", 4)
        run_train(config, tmp_path / "paralelo", env=tiny_env)
        assert ((tmp_path / "serial" / "train_log.csv").read_bytes()
                == (tmp_path / "paralelo" / "train_log.csv").read_bytes())

    def test_divergence_keeps_last_good_checkpoint(self, tiny_env, tmp_path, mocker):
        """Falha no objetivo interrompe o treino e grava o último checkpoint bom."""
        mocker.patch.object(trainer_service, "grpo_objective", side_effect=PolicyError("gradiente não finito"))
        with pytest.raises(DivergenceError) as error:
            run_train(_config(), tmp_path, env=tiny_env)
        assert error.value.diagnostics["step"] == 1
        assert (tmp_path / "policy.ckpt").exists()
        assert not (tmp_path / "train_log.csv").exists()

    def test_metrics_export(self, tiny_env, tmp_path):
        """Métricas Prometheus exportadas junto com o log."""
        run_train(_config(trainer={"steps": 1}), tmp_path, env=tiny_env)
        assert "needrank_policy_updates_total" in (tmp_path / "metrics.prom").read_text()


@pytest.mark.integration
class TestRunEval:
    """Testes da avaliação no teste."""

    def test_eval_outputs(self, tiny_env, tmp_path):
        """Uma linha por contexto de teste e resumo com as sete métricas."""
        config = _config(trainer={"steps": 1})
        run_train(config, tmp_path, env=tiny_env)
        summary = run_eval(config, tmp_path, env=tiny_env)
        rows = pd.read_csv(tmp_path / "eval.csv")
        assert len(rows) == len(tiny_env.contexts("test"))
        assert (rows["n_invalid_items"] == 0).all()
        assert rows["ndcg5"].between(0, 1).all()
        assert summary["metric"].tolist()[0] == "ndcg5"
        assert (tmp_path / "eval_summary.csv").exists()

    def test_missing_checkpoint(self, tiny_env, tmp_path):
        """Sem checkpoint não há o que avaliar."""
        with pytest.raises(ConfigError):
            run_eval(_config(), tmp_path, env=tiny_env)

    def test_oracle_ranker_is_ideal(self, tiny_env):
        """Ranqueador que lê a relevância verdadeira tem NDCG@5 = 1."""
        config = _config()

        def oracle(ctx):
            gains = tiny_env.relevance[ctx.context_id].gains
            return sorted(ctx.candidates, key=lambda item: -gains[item]), 0

        summary = summarize_reports(evaluate_ranker(tiny_env, tiny_env.contexts("test"), oracle, config))
        means = dict(zip(summary["metric"], summary["mean"]))
        assert means["ndcg5"] == pytest.approx(1.0)
        assert means["ndcg10"] == pytest.approx(1.0)

    def test_external_rankings_are_padded(self, tiny_env, tmp_path):
        """Itens inválidos são contados e as listas completadas."""
        contexts = tiny_env.contexts("test")
        first = contexts[0]
        path = tmp_path / "rankings.tsv"
        path.write_text(
            f"{first.context_id}\t99999,{first.candidates[0]},{first.candidates[0]}\n", encoding="utf-8")
        config = _config().with_overrides(eval={"external_rankings": str(path)})
        run_eval(config, tmp_path, env=tiny_env)
        rows = pd.read_csv(tmp_path / "eval.csv").set_index("context_id")
        assert rows.loc[first.context_id, "n_invalid_items"] == 2
        assert (rows.drop(index=first.context_id)["n_invalid_items"] == 0).all()

        run_eval(config, tmp_path / "de_novo", env=tiny_env)
        assert (tmp_path / "eval.csv").read_bytes() == (tmp_path / "de_novo" / "eval.csv").read_bytes()


@pytest.mark.integration
class TestOtherCommands:
    """Testes dos comandos de dados e ablação."""

    def test_gen_synthetic(self, tmp_path):
        """Grava interações, embeddings, tópicos e o modelo verdadeiro."""
        paths = run_gen_synthetic(_config(), tmp_path)
        assert set(paths) == {"interactions", "embeddings", "topics", "ground_truth"}
        assert all(path.exists() for path in paths.values())
        assert (tmp_path / "interactions.csv").read_text().startswith(
            "user_id,item_id,timestamp,signal_kind,signal_value\n")

    def test_make_needs(self, tmp_path):
        """Uma linha e uma tabela de relevância por contexto."""
        frame = run_make_needs(_config(), tmp_path)
        assert len(frame) == 40
        assert frame["split"].value_counts().to_dict() == {"train": 32, "val": 4, "test": 4}
        assert len(list((tmp_path / "relevance").glob("*.tsv"))) == 40

    def test_reward_variant_ablation(self, tmp_path):
        """Três linhas com os mesmos contextos amostrados."""
        table = run_ablation(_config(), tmp_path, AblationPreset.REWARD_VARIANT)
        assert list(table.columns) == ABLATION_COLUMNS
        assert table["configuration"].tolist() == ["causal_swap", "noncausal_swap", "independent_contribution"]
        assert table["context_digest"].nunique() == 1
        assert (tmp_path / "ablation.csv").exists()
        assert json.loads((tmp_path / "ablation_config.json").read_text())["seed"] == 7

    def test_advantage_mode_ablation(self, tmp_path):
        """Duas linhas: item e sequência."""
        table = run_ablation(_config(), tmp_path, AblationPreset.ADVANTAGE_MODE)
        assert table["configuration"].tolist() == ["item_level", "sequence_level"]

    def test_uncertainty_ablation(self, tmp_path):
        """Quatro linhas: dois CF, crítico bruto e crítico com incerteza."""
        table = run_ablation(_config(), tmp_path, AblationPreset.UNCERTAINTY)
        assert table["configuration"].tolist() == ["user_knn", "item_knn", "critic_raw", "critic_uncertainty"]
        assert table["context_digest"].nunique() == 1
        assert (tmp_path / "critic.ckpt").exists()
        assert (tmp_path / "calibration.csv").exists()
