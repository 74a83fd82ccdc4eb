"""
Testes para a construção de relevâncias por necessidade.
Os arquivos em tests/golden guardam as tabelas esperadas dos contextos de quatro candidatos.
"""

import os

import numpy as np
import pytest

from needrank.models import EsciLabel, NeedKind, RelevanceTable, SignalKind
from needrank.services.needs_service import (
    TrendIndex,
    build_relevance,
    esci_gain,
    interest_gain,
    minmax_normalize,
    niche_gain,
    niche_label,
    trend_count,
    trend_gain,
)

from tests.conftest import GOLDEN_DIR, QUERY_TIME, make_context


def golden_lines(name):
    with open(os.path.join(GOLDEN_DIR, name), encoding="utf-8") as handle:
        return handle.read().splitlines()


@pytest.mark.unit
class TestGoldenRelevance:
    """Tabelas de relevância comparadas aos arquivos de referência."""

    def test_max_interest_ratings(self):
        """Ratings 5, 4, 1, 3 viram 31, 15, 1, 7."""
        ctx = make_context(NeedKind.max_interest())
        table = build_relevance(ctx, ctx.need, signals={1: 5, 2: 4, 3: 1, 4: 3}, signal_kind=SignalKind.RATING)
        assert table.to_lines() == golden_lines("max_interest_ratings.tsv")

    def test_product_search_esci(self):
        """E/S/C/I viram 1.0/0.1/0.01/0.0."""
        ctx = make_context(NeedKind.product_search())
        table = build_relevance(ctx, ctx.need, esci_labels={1: "E", 2: "S", 3: "C", 4: "I"})
        assert table.to_lines() == golden_lines("product_search_esci.tsv")

    def test_trend_promotion(self, toy_embeddings, toy_trend_log):
        """alpha=0.7 entre similaridade e contagem na janela, ambas min-max."""
        ctx = make_context(NeedKind.trend_promotion(0.7))
        table = build_relevance(ctx, ctx.need, embeddings=toy_embeddings, interactions=toy_trend_log)
        expected = RelevanceTable.from_lines(golden_lines("trend_promotion.tsv"))
        assert table.vector(ctx.candidates) == pytest.approx(expected.vector(ctx.candidates), abs=1e-12)

    def test_niche_discovery(self, toy_embeddings, toy_topics):
        """Bônus multiplicativo 1.5 no único candidato de nicho."""
        ctx = make_context(NeedKind.niche_discovery(0.5))
        table = build_relevance(ctx, ctx.need, embeddings=toy_embeddings, topics=toy_topics)
        expected = RelevanceTable.from_lines(golden_lines("niche_discovery.tsv"))
        assert table.vector(ctx.candidates) == pytest.approx(expected.vector(ctx.candidates), abs=1e-12)

    def test_trend_accepts_prebuilt_index(self, toy_embeddings, toy_trend_log):
        """Índice pré-construído dá a mesma tabela que o log."""
        ctx = make_context(NeedKind.trend_promotion(0.7))
        from_log = build_relevance(ctx, ctx.need, embeddings=toy_embeddings, interactions=toy_trend_log)
        from_index = build_relevance(ctx, ctx.need, embeddings=toy_embeddings,
                                     interactions=TrendIndex(toy_trend_log))
        assert from_log == from_index


@pytest.mark.unit
class TestGainFunctions:
    """Testes das funções de ganho."""

    def test_watch_ratio_used_directly(self):
        """Watch ratio não é transformado."""
        assert interest_gain(SignalKind.WATCH_RATIO, 1.7) == 1.7

    @pytest.mark.parametrize("rating,gain", [(1, 1.0), (2, 3.0), (3, 7.0), (4, 15.0), (5, 31.0)])
    def test_rating_map(self, rating, gain):
        """Rating r vira 2^r - 1."""
        assert interest_gain(SignalKind.RATING, rating) == gain

    @pytest.mark.parametrize("kind,value", [(SignalKind.RATING, 0), (SignalKind.RATING, 3.5),
                                            (SignalKind.WATCH_RATIO, -0.1),
                                            (SignalKind.WATCH_RATIO, float("inf"))])
    def test_invalid_signals(self, kind, value):
        """Sinais fora do domínio são rejeitados."""
        with pytest.raises(ValueError):
            interest_gain(kind, value)

    def test_esci_mapping(self):
        """Mapeamento graduado aceita enum ou texto."""
        assert [esci_gain(label) for label in "ESCI"] == [1.0, 0.1, 0.01, 0.0]
        assert esci_gain(EsciLabel.SUBSTITUTE) == 0.1

    def test_niche_gain(self):
        """Multiplicativo só para nicho."""
        assert niche_gain(0.8, True, 0.5) == pytest.approx(1.2)
        assert niche_gain(0.8, False, 0.5) == 0.8
        with pytest.raises(ValueError):
            niche_gain(-0.1, True, 0.5)

    def test_trend_gain_is_convex(self):
        """alpha * sim + (1 - alpha) * trend."""
        assert trend_gain(1.0, 0.0, 0.7) == pytest.approx(0.7)
        assert trend_gain(0.0, 1.0, 0.7) == pytest.approx(0.3)

    def test_minmax_normalize(self):
        """Min-max comum, constante vira zeros, vazio fica vazio."""
        assert minmax_normalize([3, 1, 0, 2]) == pytest.approx([1, 1 / 3, 0, 2 / 3])
        assert minmax_normalize([2.0, 2.0]).tolist() == [0.0, 0.0]
        assert minmax_normalize([]).size == 0


@pytest.mark.unit
class TestNicheAndTrend:
    """Testes de rótulos de nicho e contagens em janela."""

    def test_niche_label(self):
        """Nicho exige tópicos e nenhum em comum com o histórico."""
        assert niche_label({"b"}, {"a"})
        assert not niche_label({"a", "b"}, {"a"})
        assert not niche_label(set(), {"a"})
        assert not niche_label(None, {"a"})

    def test_window_is_half_open(self, toy_trend_log):
        """Contagens em (t - W, t]: a borda inferior fica de fora."""
        counts = [trend_count(toy_trend_log, item, QUERY_TIME) for item in (1, 2, 3, 4)]
        assert counts == [3, 1, 0, 2]

    def test_unknown_item_counts_zero(self, toy_trend_log):
        """Item sem interações tem contagem 0."""
        assert TrendIndex(toy_trend_log).count(77, QUERY_TIME, 86_400) == 0

    def test_shorter_window(self, toy_trend_log):
        """Janela de uma hora só vê as interações recentes."""
        index = TrendIndex(toy_trend_log)
        assert [index.count(item, QUERY_TIME, 3_600) for item in (1, 2, 3, 4)] == [1, 1, 0, 0]


@pytest.mark.unit
class TestBuildRelevanceEdgeCases:
    """Casos de borda de build_relevance."""

    def test_missing_signal_is_zero(self):
        """Candidato sem sinal observado tem ganho 0."""
        ctx = make_context(NeedKind.max_interest())
        table = build_relevance(ctx, ctx.need, signals={1: 0.9})
        assert table.vector(ctx.candidates).tolist() == [0.9, 0.0, 0.0, 0.0]

    def test_missing_esci_label_is_irrelevant(self):
        """Sem rótulo, o candidato é irrelevante."""
        ctx = make_context(NeedKind.product_search())
        table = build_relevance(ctx, ctx.need, esci_labels={2: "E"})
        assert table.vector(ctx.candidates).tolist() == [0.0, 1.0, 0.0, 0.0]

    @pytest.mark.parametrize("need", [NeedKind.max_interest(), NeedKind.niche_discovery(0.5),
                                      NeedKind.trend_promotion(0.7), NeedKind.product_search()])
    def test_missing_inputs(self, need):
        """Cada necessidade exige suas entradas."""
        ctx = make_context(need)
        with pytest.raises(ValueError):
            build_relevance(ctx, need)

    def test_all_gains_nonnegative(self, toy_embeddings, toy_topics, toy_trend_log):
        """Todas as construções produzem ganhos finitos e não negativos."""
        for need in (NeedKind.niche_discovery(2.0), NeedKind.trend_promotion(0.3)):
            ctx = make_context(need)
            table = build_relevance(ctx, need, embeddings=toy_embeddings, topics=toy_topics,
                                    interactions=toy_trend_log)
            gains = table.vector(ctx.candidates)
            assert np.all(np.isfinite(gains)) and np.all(gains >= 0)
