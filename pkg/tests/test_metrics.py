import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lexcourt.corpus import Qrels
from lexcourt.fusion import RankedList
from lexcourt.metrics import (
    MetricSpec,
    RetrievalCounts,
    accuracy,
    counts_from_sets,
    evaluate_ranked_lists,
    evaluate_retrieved_sets,
    f_from_pr,
    format_report,
    macro_f2,
    micro_f1_labels,
    micro_prf,
    recall_at_k,
    report_json,
)


class TestFMeasure:
    def test_f1_known_value(self):
        assert f_from_pr(0.5, 0.5) == pytest.approx(0.5)
        assert f_from_pr(0.4, 0.5) == pytest.approx(4 / 9)

    def test_f2_weights_recall(self):
        # beta=2: (5 * p * r) / (4p + r)
        assert f_from_pr(0.5, 1.0, beta=2.0) == pytest.approx(5 * 0.5 / 3.0)

    def test_zero_denominator(self):
        assert f_from_pr(0.0, 0.0) == 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            f_from_pr(0.5, 0.5, beta=0.0)
        with pytest.raises(ValueError):
            f_from_pr(1.5, 0.5)

    @given(
        st.floats(0, 1, allow_nan=False),
        st.floats(0, 1, allow_nan=False),
        st.floats(0.1, 5, allow_nan=False),
    )
    def test_bounded_by_min_and_max(self, p, r, beta):
        f = f_from_pr(p, r, beta)
        assert 0.0 <= f <= 1.0
        assert f <= max(p, r) + 1e-12


class TestMicro:
    def test_pooled_counts(self):
        counts = RetrievalCounts(retrieved=10, relevant=8, hits=4)
        p, r, f1 = micro_prf(counts)
        assert (p, r) == (0.4, 0.5)
        assert f1 == pytest.approx(4 / 9)

    def test_zero_counts(self):
        assert micro_prf(RetrievalCounts(0, 0, 0)) == (0.0, 0.0, 0.0)

    def test_counts_validation(self):
        with pytest.raises(ValueError):
            RetrievalCounts(retrieved=1, relevant=1, hits=2)

    def test_counts_from_sets_pools_over_qrels(self):
        qrels = Qrels(entries={"q1": frozenset({"a", "b"}), "q2": frozenset({"c"})})
        retrieved = {"q1": {"a", "x"}, "q3": {"zzz"}}  # q2 missing, q3 ignored
        counts = counts_from_sets(retrieved, qrels)
        assert counts == RetrievalCounts(retrieved=2, relevant=3, hits=1)


class TestMacroF2:
    def test_known_mean(self):
        # q1: p=1/2, r=1/1 -> F2 = 5*(1/2)/(4*(1/2)+1) = 5/6
        # q2: p=1/2, r=1/2 -> F2 = 1/2
        pairs = [({"a", "x"}, {"a"}), ({"b", "y"}, {"b", "z"})]
        assert macro_f2(pairs) == pytest.approx((5 / 6 + 1 / 2) / 2)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            macro_f2([])

    def test_empty_selection_scores_zero(self):
        assert macro_f2([(set(), {"a"})]) == 0.0


class TestRecallAtK:
    def test_basic(self):
        rl = RankedList("q", (("a", 3.0), ("b", 2.0), ("c", 1.0)))
        assert recall_at_k(rl, {"a", "c"}, 1) == 0.5
        assert recall_at_k(rl, {"a", "c"}, 3) == 1.0

    def test_empty_relevant(self):
        rl = RankedList("q", (("a", 1.0),))
        assert recall_at_k(rl, set(), 5) == 0.0

    @given(st.integers(1, 30), st.integers(1, 30))
    def test_monotone_in_k(self, k1, k2):
        rl = RankedList("q", tuple((f"d{i}", float(30 - i)) for i in range(20)))
        relevant = {f"d{i}" for i in range(0, 20, 3)}
        lo, hi = sorted((k1, k2))
        assert recall_at_k(rl, relevant, lo) <= recall_at_k(rl, relevant, hi)


class TestLabelMetrics:
    def test_accuracy(self):
        assert accuracy(54, 73) == pytest.approx(0.7397, abs=1e-4)
        assert accuracy(0, 0) == 0.0
        with pytest.raises(ValueError):
            accuracy(5, 4)

    def test_micro_f1_labels_true_positive_class(self):
        pred = [True, True, True, True]
        gold = [True, False, False, False]
        # tp=1 fp=3 fn=0 -> p=0.25 r=1 f1=0.4
        assert micro_f1_labels(pred, gold) == pytest.approx(0.4)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            micro_f1_labels([True], [True, False])

    def test_all_negative(self):
        assert micro_f1_labels([False, False], [False, False]) == 0.0


class TestEvaluators:
    def test_retrieved_sets_micro(self):
        qrels = Qrels(entries={"q": frozenset({"a"})})
        spec = MetricSpec("micro_f1")
        assert evaluate_retrieved_sets(spec, {"q": {"a"}}, qrels) == 1.0

    def test_retrieved_sets_rejects_rank_metric(self):
        qrels = Qrels(entries={"q": frozenset({"a"})})
        with pytest.raises(ValueError):
            evaluate_retrieved_sets(MetricSpec("recall_at_k", k=3), {}, qrels)

    def test_ranked_lists_mean_over_qrels(self):
        qrels = Qrels(entries={"q1": frozenset({"a"}), "q2": frozenset({"b"})})
        lists = {"q1": RankedList("q1", (("a", 1.0),))}  # q2 missing -> recall 0
        value = evaluate_ranked_lists(MetricSpec("recall_at_k", k=1), lists, qrels)
        assert value == 0.5

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            MetricSpec("recall_at_k")
        with pytest.raises(ValueError):
            MetricSpec("micro_f1", beta=-1.0)


class TestReports:
    def test_format_four_decimals(self):
        text = format_report({"f1": 0.625, "n": 7}, title="run")
        assert text == "run\nf1  0.6250\nn   7\n"

    def test_round_half_even(self):
        # 0.10625 and 0.10635 bracket an even/odd final digit
        assert f"{0.10625:.4f}" in format_report({"x": 0.10625})

    def test_json_rounds(self):
        payload = json.loads(report_json({"f1": 1 / 3, "n": 7}))
        assert payload == {"f1": 0.3333, "n": 7}

    def test_json_sorted_keys(self):
        assert report_json({"b": 1, "a": 2}) == '{"a": 2, "b": 1}'
