import json

import pytest

from juno import plots
from juno.alignment import ProjectionModel, TrainConfig
from juno.attention_index import build_index, training_matches
from juno.errors import ValidationError
from juno.evaluation import (bench_pruning, evaluate, f1_score, label_efficiency_curve,
                             read_gold, truncate_percent, write_gold)
from juno.pipeline import MatchResult, RankedTuple


def results_with_precision(hits, n):
    """n single-answer results, the first ``hits`` of them correct."""
    gold = {f"d{k:05d}": "good" for k in range(n)}
    res = [MatchResult(d, [RankedTuple("good" if k < hits else "bad", 1, 0.1, 0.1)])
           for k, d in enumerate(sorted(gold))]
    return res, gold


class TestMetrics:
    @pytest.mark.parametrize("p, f1", [(75.05, 85.74), (58.80, 74.05), (77.25, 87.16),
                                       (60.10, 75.07), (87.90, 93.56), (68.06, 80.99)])
    def test_f1_at_perfect_recall(self, p, f1):
        assert truncate_percent(f1_score(p / 100, 1.0)) == f1

    def test_evaluate_reproduces_f1(self):
        res, gold = results_with_precision(1501, 2000)  # P = 0.7505
        row = evaluate(res, gold, (1,)).rows()[0]
        assert row == (1, 75.05, 100.0, 85.74)

    def test_truncation_not_rounding(self):
        assert truncate_percent(0.85749) == 85.74
        assert truncate_percent(0.5) == 50.0

    def test_precision_at_k(self):
        gold = {"a": "x", "b": "y"}
        res = [MatchResult("a", [RankedTuple("z", 2, 0, 0), RankedTuple("x", 1, 0, 0)]),
               MatchResult("b", [RankedTuple("q", 1, 0, 0)])]
        rep = evaluate(res, gold, (1, 2))
        assert rep.per_k[1]["precision"] == 0 and rep.per_k[2]["precision"] == 0.5

    def test_missing_and_empty_documents_lower_recall(self):
        gold = {"a": "x", "b": "y", "c": "z"}
        res = [MatchResult("a", [RankedTuple("x", 1, 0, 0)]), MatchResult("b", [])]
        rep = evaluate(res, gold, (1,))
        assert rep.missing == ["c"]
        assert rep.per_k[1]["recall"] == pytest.approx(1 / 3)

    def test_bad_k(self):
        with pytest.raises(ValidationError):
            evaluate([], {}, (0,))

    def test_gold_round_trip(self, tmp_path):
        write_gold({"b": "1", "a": "2"}, tmp_path / "g.jsonl")
        assert read_gold(tmp_path / "g.jsonl") == {"a": "2", "b": "1"}


class TestCurvesAndBench:
    def test_label_efficiency_rejects_duplicate_sizes(self, small_corpus):
        c = small_corpus
        with pytest.raises(ValidationError, match="duplicate"):
            label_efficiency_curve(c.corpus.train, c.corpus.val, [10, 10], c.span_lookup, c.ids,
                                   c.T, c.missing, c.docs, c.corpus.gold)

    def test_label_efficiency_curve(self, small_corpus, tmp_path):
        c = small_corpus
        curve = label_efficiency_curve(c.corpus.train, c.corpus.val, [5, 40], c.span_lookup,
                                       c.ids, c.T, c.missing, c.docs, c.corpus.gold,
                                       TrainConfig(epochs=2, seed=1), seed=1)
        assert list(curve) == [5, 40] and all(0 <= v <= 1 for v in curve.values())
        assert plots.plot_label_efficiency({1: curve}, tmp_path / "le.png").exists()

    def test_bench_pruning(self, small_corpus, tmp_path):
        c = small_corpus
        m = ProjectionModel.init(c.d, 0)
        idx = build_index(training_matches(c.corpus.train, c.span_lookup, c.tuple_lookup, m),
                          c.ids, c.T, c.missing, m)
        rows = bench_pruning(c.docs[:3], c.ids, c.T, c.missing, m, idx, [50, 120])
        assert [r.db_size for r in rows] == [50, 120]
        assert rows[1].comparisons_unpruned > rows[0].comparisons_unpruned
        assert json.dumps([r.to_json() for r in rows])
        assert plots.plot_bench(rows, tmp_path / "b.png").exists()
        with pytest.raises(ValidationError):
            bench_pruning(c.docs[:1], c.ids, c.T, c.missing, m, idx, [10**6])
