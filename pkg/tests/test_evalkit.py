"""Tests for ranking metrics and run evaluation."""

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from taxoindex.evalkit import (
    EvalError,
    Qrels,
    RunFile,
    evaluate_run,
    load_run,
    map_at_k,
    ndcg_at_k,
    recall_at_k,
    report_table,
    save_run,
)


class TestRecall:
    def test_full_recall(self):
        assert recall_at_k(["a", "b", "c", "d"], {"a", "b", "c"}, 10) == 1.0

    def test_partial(self):
        assert recall_at_k(["d1", "d2", "d3"], {"d3", "d9"}, 3) == 0.5

    def test_k_beyond_list_saturates(self):
        ranked = ["a", "b"]
        assert recall_at_k(ranked, {"a"}, 100) == recall_at_k(ranked, {"a"}, 2)

    def test_empty_relevant_errors(self):
        with pytest.raises(EvalError):
            recall_at_k(["a"], set(), 5)

    @given(st.integers(1, 9))
    def test_monotone_in_k(self, k):
        ranked = [f"d{i}" for i in range(10)]
        relevant = {"d2", "d5", "d8"}
        assert recall_at_k(ranked, relevant, k) <= recall_at_k(ranked, relevant, k + 1)


class TestNdcg:
    def test_ideal_ranking(self):
        assert ndcg_at_k(["rel", "x", "y"], {"rel"}, 5) == 1.0

    def test_single_relevant_rank_two(self):
        value = ndcg_at_k(["x", "rel", "y"], {"rel"}, 5)
        assert value == pytest.approx(1 / math.log2(3), abs=1e-9)

    def test_two_relevant_ranks_one_three(self):
        value = ndcg_at_k(["r1", "x", "r2"], {"r1", "r2"}, 3)
        expected = (1 + 1 / 2) / (1 + 1 / math.log2(3))
        assert value == pytest.approx(expected, abs=1e-9)
        assert value == pytest.approx(0.9197, abs=5e-5)

    def test_in_unit_interval(self):
        assert 0.0 <= ndcg_at_k(["x", "y"], {"z"}, 2) <= 1.0


class TestMap:
    def test_perfect_prefix(self):
        assert map_at_k(["r1", "r2", "x"], {"r1", "r2"}, 5) == 1.0

    def test_single_relevant_rank_four(self):
        assert map_at_k(["x", "y", "z", "rel", "w"], {"rel"}, 5) == 0.25

    def test_miss(self):
        assert map_at_k(["x", "y"], {"rel"}, 2) == 0.0

    def test_denominator_capped_by_k(self):
        # Three relevant docs but k=2: denominator is 2.
        value = map_at_k(["r1", "r2"], {"r1", "r2", "r3"}, 2)
        assert value == pytest.approx((1.0 + 1.0) / 2)


class TestMetricInvariance:
    def test_swapping_non_relevant_docs_changes_nothing(self):
        relevant = {"r"}
        a = ["x", "r", "y", "z"]
        b = ["z", "r", "y", "x"]
        for fn in (recall_at_k, ndcg_at_k, map_at_k):
            assert fn(a, relevant, 4) == fn(b, relevant, 4)


class TestEvaluateRun:
    def make(self):
        run = RunFile()
        run.add("q1", ["d1", "d2", "d3"])
        run.add("q2", ["d4", "d5"])
        qrels = Qrels({"q1": {"d1": 3, "d2": 0, "d3": 1},
                       "q2": {"d5": 2, "d9": 1}}, threshold=1)
        return run, qrels

    def test_hand_computed_report(self):
        run, qrels = self.make()
        report = evaluate_run(run, qrels, ks={"ndcg": [3], "recall": [2]})
        # q1: relevant {d1, d3}; hits at ranks 1 and 3.
        n_q1 = (1 + 1 / 2) / (1 + 1 / math.log2(3))
        # q2: relevant {d5, d9}; hit at rank 2.
        n_q2 = (1 / math.log2(3)) / (1 + 1 / math.log2(3))
        metrics = report["metrics"]
        assert metrics["N@3"]["per_query"]["q1"] == pytest.approx(n_q1, abs=1e-9)
        assert metrics["N@3"]["per_query"]["q2"] == pytest.approx(n_q2, abs=1e-9)
        assert metrics["N@3"]["mean"] == pytest.approx((n_q1 + n_q2) / 2, abs=1e-9)
        assert metrics["R@2"]["per_query"]["q1"] == 0.5
        assert metrics["R@2"]["per_query"]["q2"] == 0.5

    def test_ideal_run_all_ndcg_one(self):
        run = RunFile()
        run.add("q1", ["d1", "d2"])
        qrels = Qrels({"q1": {"d1": 2, "d2": 2}})
        report = evaluate_run(run, qrels, ks={"ndcg": [2]})
        assert report["metrics"]["N@2"]["mean"] == 1.0

    def test_missing_query_errors(self):
        run = RunFile()
        run.add("mystery", ["d1"])
        with pytest.raises(EvalError, match="mystery"):
            evaluate_run(run, Qrels({"q1": {"d1": 1}}))

    def test_duplicate_doc_rejected(self):
        run = RunFile()
        with pytest.raises(EvalError, match="duplicate"):
            run.add("q1", ["d1", "d1"])

    def test_table_and_round_trip(self, tmp_path):
        run, qrels = self.make()
        report = evaluate_run(run, qrels)
        table = report_table(report)
        assert "N@5" in table and "R@100" in table
        path = tmp_path / "run.tsv"
        save_run(run, {"q1": {"d1": 2.5}}, path)
        loaded = load_run(path)
        assert loaded.rankings == run.rankings

    def test_threshold_binarization(self):
        qrels = Qrels({"q": {"a": 3, "b": 2, "c": 1}}, threshold=3)
        assert qrels.relevant_set("q") == {"a"}
