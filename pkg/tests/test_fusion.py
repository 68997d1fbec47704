import math
import statistics

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lexcourt.corpus import Qrels
from lexcourt.errors import DataFormatError
from lexcourt.fusion import (
    RankedList,
    ScoreTable,
    SelectionRule,
    WeightVector,
    _weight_lattice,
    grid_search_weights,
    majority_vote_topm,
    normalize_scores,
    read_score_table,
    read_trec_run,
    similarity_informed_weights,
    threshold_select,
    tune_threshold,
    weighted_combine,
    write_score_table,
    write_trec_run,
)
from lexcourt.embedding import EmbeddingStore
from lexcourt.metrics import MetricSpec


class TestRankedList:
    def test_rejects_increasing_scores(self):
        with pytest.raises(ValueError):
            RankedList("q", (("a", 1.0), ("b", 2.0)))

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            RankedList("q", (("a", 2.0), ("a", 1.0)))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            RankedList("q", (("a", math.nan),))

    def test_top_and_ids(self):
        rl = RankedList("q", (("a", 3.0), ("b", 2.0)))
        assert rl.top(1) == (("a", 3.0),)
        assert rl.ids() == ["a", "b"]


class TestScoreTable:
    def test_ranked_orders_desc_then_id(self):
        table = ScoreTable("s", {"q": {"b": 1.0, "a": 1.0, "c": 2.0}})
        assert table.ranked("q").ids() == ["c", "a", "b"]

    def test_missing_query_is_empty(self):
        table = ScoreTable("s", {})
        assert table.ranked("nope").entries == ()

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            ScoreTable("s", {"q": {"a": math.inf}})


class TestNormalize:
    def test_minmax(self):
        table = ScoreTable("s", {"q": {"a": 1.0, "b": 3.0, "c": 2.0}})
        out = normalize_scores(table, "minmax").scores["q"]
        assert out == {"a": 0.0, "b": 1.0, "c": 0.5}

    def test_minmax_constant_row(self):
        table = ScoreTable("s", {"q": {"a": 2.0, "b": 2.0}})
        assert normalize_scores(table, "minmax").scores["q"] == {"a": 0.5, "b": 0.5}

    def test_zscore_population_sigma(self):
        values = {"a": 1.0, "b": 2.0, "c": 3.0}
        out = normalize_scores(ScoreTable("s", {"q": values}), "zscore").scores["q"]
        mean = 2.0
        sigma = statistics.pstdev(values.values())
        for cid, value in values.items():
            assert out[cid] == pytest.approx((value - mean) / sigma)

    def test_zscore_constant_row(self):
        table = ScoreTable("s", {"q": {"a": 5.0, "b": 5.0}})
        assert normalize_scores(table, "zscore").scores["q"] == {"a": 0.0, "b": 0.0}

    def test_none_is_identity(self):
        table = ScoreTable("s", {"q": {"a": 7.0}})
        assert normalize_scores(table, "none").scores == table.scores

    def test_rows_normalized_independently(self):
        table = ScoreTable("s", {"q1": {"a": 0.0, "b": 10.0}, "q2": {"a": 5.0, "b": 6.0}})
        out = normalize_scores(table, "minmax").scores
        assert out["q1"]["b"] == 1.0 and out["q2"]["b"] == 1.0

    @given(
        st.dictionaries(
            st.text(alphabet="abc", min_size=1, max_size=2),
            st.floats(-100, 100),
            min_size=1,
            max_size=6,
        )
    )
    def test_minmax_bounds(self, row):
        out = normalize_scores(ScoreTable("s", {"q": row}), "minmax").scores["q"]
        assert all(0.0 <= v <= 1.0 for v in out.values())


class TestWeightedCombine:
    def test_missing_scores_are_zero(self):
        a = ScoreTable("a", {"q": {"x": 1.0}})
        b = ScoreTable("b", {"q": {"y": 1.0}})
        w = WeightVector({"a": 0.6, "b": 0.4})
        out = weighted_combine([a, b], w).scores["q"]
        assert out == {"x": 0.6, "y": 0.4}

    def test_query_union(self):
        a = ScoreTable("a", {"q1": {"x": 1.0}})
        b = ScoreTable("b", {"q2": {"y": 1.0}})
        w = WeightVector({"a": 0.5, "b": 0.5})
        assert set(weighted_combine([a, b], w).scores) == {"q1", "q2"}

    def test_duplicate_scorer_names_rejected(self):
        a = ScoreTable("a", {})
        with pytest.raises(ValueError):
            weighted_combine([a, a], WeightVector({"a": 1.0}))

    def test_weight_without_table_rejected(self):
        a = ScoreTable("a", {})
        with pytest.raises(ValueError, match="no table"):
            weighted_combine([a], WeightVector({"a": 0.5, "ghost": 0.5}))

    def test_weight_vector_validation(self):
        with pytest.raises(ValueError):
            WeightVector({"a": 0.5, "b": 0.6})
        with pytest.raises(ValueError):
            WeightVector({"a": -0.5, "b": 1.5})
        with pytest.raises(ValueError):
            WeightVector({})


class TestSelection:
    def test_threshold_strictly_greater(self):
        rl = RankedList("q", (("a", 0.5), ("b", 0.4)))
        assert threshold_select(rl, 0.5) == set()
        assert threshold_select(rl, 0.4) == {"a"}

    def test_fallback_top1(self):
        rl = RankedList("q", (("a", 0.1), ("b", 0.05)))
        assert threshold_select(rl, 0.9, fallback_top1=True) == {"a"}
        assert threshold_select(RankedList("q", ()), 0.9, fallback_top1=True) == set()

    def test_selection_rule_top_k(self):
        rl = RankedList("q", (("a", 3.0), ("b", 2.0), ("c", 1.0)))
        assert SelectionRule(kind="top_k", k=2).apply(rl) == {"a", "b"}

    def test_selection_rule_validation(self):
        with pytest.raises(ValueError):
            SelectionRule(kind="top_k", k=0)


class TestMajorityVote:
    def lists(self, *orders):
        return [
            RankedList(f"q", tuple((cid, float(len(order) - i)) for i, cid in enumerate(order)))
            for order in orders
        ]

    def test_default_quorum_majority(self):
        lists = self.lists(["a", "b", "c"], ["a", "c", "d"], ["a", "e", "f"])
        # quorum = ceil(3/2) = 2: a in all three, c in two
        assert majority_vote_topm(lists, m=3) == ["a", "c"]

    def test_order_votes_then_mean_rank_then_id(self):
        lists = self.lists(["a", "b"], ["b", "a"], ["a", "b"])
        # both in all 3; a mean rank (1+2+1)/3 < b (2+1+2)/3
        assert majority_vote_topm(lists, m=2) == ["a", "b"]
        lists = self.lists(["a", "b"], ["b", "a"])
        # equal votes and mean ranks; id breaks the tie
        assert majority_vote_topm(lists, m=2, quorum=2) == ["a", "b"]

    def test_max_out(self):
        lists = self.lists(["a", "b", "c"], ["a", "b", "c"])
        assert majority_vote_topm(lists, m=3, max_out=2) == ["a", "b"]

    def test_validation(self):
        lists = self.lists(["a"], ["a"])
        with pytest.raises(ValueError):
            majority_vote_topm(lists, m=0)
        with pytest.raises(ValueError):
            majority_vote_topm(lists[:1], m=1)
        with pytest.raises(ValueError):
            majority_vote_topm(lists, m=1, quorum=3)

    @settings(max_examples=50, deadline=None)
    @given(st.data())
    def test_everywhere_present_is_selected(self, data):
        universe = [f"d{i}" for i in range(8)]
        n_lists = data.draw(st.integers(2, 4))
        m = data.draw(st.integers(1, 6))
        orders = [
            data.draw(st.permutations(universe), label=f"list{i}") for i in range(n_lists)
        ]
        lists = self.lists(*orders)
        selected = majority_vote_topm(lists, m=m)
        in_all = set(orders[0][:m])
        for order in orders[1:]:
            in_all &= set(order[:m])
        assert in_all <= set(selected)


class TestWeightLattice:
    def test_descending_leading_component(self):
        assert list(_weight_lattice(2, 2)) == [(2, 0), (1, 1), (0, 2)]

    def test_three_scorers(self):
        points = list(_weight_lattice(3, 2))
        assert points[0] == (2, 0, 0)
        assert points[-1] == (0, 0, 2)
        assert len(points) == 6  # C(2+2, 2)
        assert all(sum(p) == 2 for p in points)

    def test_all_points_distinct(self):
        points = list(_weight_lattice(4, 5))
        assert len(points) == len(set(points))


class TestGridSearch:
    def qrels(self):
        return Qrels(entries={f"q{i}": frozenset({f"rel{i}"}) for i in range(4)})

    def indicator_table(self, name, qrels, strength=1.0):
        scores = {}
        for qid, rel in qrels.entries.items():
            row = {cid: strength for cid in rel}
            row["noise-" + qid] = 0.1
            scores[qid] = row
        return ScoreTable(name, scores)

    def test_recovers_informative_scorer(self):
        qrels = self.qrels()
        good = self.indicator_table("good", qrels)
        bad = ScoreTable(
            "bad", {qid: {"noise-" + qid: 1.0, next(iter(rel)): 0.0} for qid, rel in qrels.entries.items()}
        )
        weights, value = grid_search_weights(
            [good, bad], qrels, MetricSpec("micro_f1"), step=0.5,
            selector=SelectionRule(kind="top_k", k=1),
        )
        assert value == 1.0
        assert weights.weights["good"] >= 0.5

    def test_tie_prefers_first_scorer(self):
        qrels = self.qrels()
        a = self.indicator_table("a", qrels)
        b = self.indicator_table("b", qrels)
        weights, value = grid_search_weights(
            [a, b], qrels, MetricSpec("micro_f1"), step=0.5,
            selector=SelectionRule(kind="top_k", k=1),
        )
        assert value == 1.0
        assert weights.weights == {"a": 1.0, "b": 0.0}

    def test_scorer_count_validation(self):
        qrels = self.qrels()
        t = self.indicator_table("a", qrels)
        with pytest.raises(ValueError):
            grid_search_weights([t], qrels, MetricSpec("micro_f1"))

    def test_step_must_divide_one(self):
        qrels = self.qrels()
        a, b = self.indicator_table("a", qrels), self.indicator_table("b", qrels)
        with pytest.raises(ValueError):
            grid_search_weights([a, b], qrels, MetricSpec("micro_f1"), step=0.3)


class TestTuneThreshold:
    def test_first_maximizer_on_ascending_grid(self):
        # relevant score 0.55, irrelevant 0.45: any theta in [0.45, 0.55) is
        # perfect; the ascending scan keeps the smallest grid value there
        qrels = Qrels(entries={"q1": frozenset({"a"}), "q2": frozenset({"c"})})
        lists = [
            RankedList("q1", (("a", 0.55), ("b", 0.45))),
            RankedList("q2", (("c", 0.55), ("d", 0.45))),
        ]
        grid = [i / 10 for i in range(1, 10)]
        theta, value = tune_threshold(lists, qrels, MetricSpec("micro_f1"), grid)
        assert value == 1.0
        assert theta == 0.5

    def test_empty_grid_rejected(self):
        qrels = Qrels(entries={"q": frozenset({"a"})})
        with pytest.raises(ValueError):
            tune_threshold([], qrels, MetricSpec("micro_f1"), [])


class TestSimilarityWeights:
    def store(self):
        return EmbeddingStore(
            dim=2,
            vectors={"d1": (1.0, 0.0), "d2": (0.0, 1.0), "d3": (0.7, 0.7)},
        )

    def test_weights_follow_neighborhood_metrics(self):
        dev_metrics = {
            "a": {"d1": 1.0, "d2": 0.0, "d3": 0.0},
            "b": {"d1": 0.0, "d2": 1.0, "d3": 0.0},
        }
        w = similarity_informed_weights((1.0, 0.0), self.store(), dev_metrics, k=1)
        assert w.weights == {"a": 1.0, "b": 0.0}

    def test_missing_dev_value_counts_zero(self):
        dev_metrics = {"a": {"d1": 0.5}, "b": {}}
        w = similarity_informed_weights((1.0, 0.0), self.store(), dev_metrics, k=2)
        assert w.weights["a"] == 1.0

    def test_all_zero_falls_back_to_uniform(self):
        dev_metrics = {"a": {}, "b": {}}
        w = similarity_informed_weights((1.0, 0.0), self.store(), dev_metrics, k=2)
        assert w.weights == {"a": 0.5, "b": 0.5}


class TestPersistence:
    def table(self):
        return ScoreTable("bm25", {"q1": {"a": 1.5, "b": 0.25}, "q2": {"c": -3.125}})

    def test_score_table_round_trip(self, tmp_path):
        path = tmp_path / "scores.tsv"
        write_score_table(self.table(), path)
        loaded = read_score_table(path)
        assert loaded == self.table()

    def test_score_table_header_carries_name(self, tmp_path):
        path = tmp_path / "scores.tsv"
        write_score_table(self.table(), path)
        assert path.read_text().splitlines()[0] == "# scorer: bm25"
        renamed = read_score_table(path, "other")
        assert renamed.scorer_name == "other"

    def test_score_table_rejects_duplicates(self, tmp_path):
        path = tmp_path / "scores.tsv"
        path.write_text("q\ta\t1.0\nq\ta\t2.0\n")
        with pytest.raises(DataFormatError):
            read_score_table(path)

    def test_trec_run_format(self, tmp_path):
        path = tmp_path / "run.trec"
        lists = [RankedList("q1", (("a", 2.0), ("b", 1.0)))]
        write_trec_run(lists, path, "tag1")
        lines = path.read_text().splitlines()
        assert lines[0] == "q1 Q0 a 1 2.000000 tag1"
        assert lines[1] == "q1 Q0 b 2 1.000000 tag1"

    def test_trec_round_trip_ordering(self, tmp_path):
        path = tmp_path / "run.trec"
        lists = [
            RankedList("q2", (("x", 1.0),)),
            RankedList("q1", (("a", 2.0), ("b", 1.0))),
        ]
        write_trec_run(lists, path, "t")
        loaded = read_trec_run(path)
        assert sorted(loaded) == ["q1", "q2"]
        assert loaded["q1"].ids() == ["a", "b"]
