import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panomatch.corpus import GeoPosition
from panomatch.evaluation import (
    SampleEvalConfig,
    ToyLayout,
    bursty_layout,
    figure_layout,
    recall_at_n,
    sample_queries,
    sample_rng,
    sparse_eval,
    sparse_results_csv,
    toy_demo,
    toy_pinv_similarity,
    within_cluster_means,
)
from panomatch.exceptions import SingularityError, ValidationError
from panomatch.retrieval import RankedList, build_index, run_mode, search_many, ImageIndex

import fixtures


class TestRecall:
    def test_crafted_fixture(self):
        curve = recall_at_n(fixtures.ranked_lists(), fixtures.QUERY_POS,
                            fixtures.target_positions(), [1, 2, 3, 4, 5])
        assert curve.recall == [0.6, 0.6, 0.8, 0.8, 1.0]
        assert curve.query_count == 5

    def test_all_rank_one_hits(self):
        ranked = [RankedList(q, [ids[0]], np.ones(1), 1) for q, ids in fixtures.ORDERS.items()
                  if ids[0].endswith("near")]
        curve = recall_at_n(ranked, fixtures.QUERY_POS, fixtures.target_positions(), [1])
        assert curve.recall == [1.0]

    def test_threshold_override(self):
        # at 31 m every "far" target counts as well
        curve = recall_at_n(fixtures.ranked_lists(), fixtures.QUERY_POS,
                            fixtures.target_positions(), [1], threshold_m=31.0)
        assert curve.recall == [1.0]

    def test_unresolvable_target(self):
        ranked = [RankedList("q1", ["nowhere"], np.ones(1), 1)]
        with pytest.raises(ValidationError, match="nowhere"):
            recall_at_n(ranked, fixtures.QUERY_POS, fixtures.target_positions(), [1])

    def test_csv(self):
        curve = recall_at_n(fixtures.ranked_lists(), fixtures.QUERY_POS,
                            fixtures.target_positions(), [1, 5])
        rows = list(csv.reader(io.StringIO(curve.to_csv())))
        assert rows == [["N", "recall", "query_count"], ["1", "0.6", "5"], ["5", "1.0", "5"]]

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_monotone_in_n(self, seed):
        rng = np.random.default_rng(seed)
        targets = {f"t{k}": GeoPosition.planar(*rng.uniform(0, 200, 2)) for k in range(30)}
        queries = {f"q{k}": GeoPosition.planar(*rng.uniform(0, 200, 2)) for k in range(10)}
        ranked = [RankedList(q, list(rng.permutation(list(targets))), np.zeros(30), 30)
                  for q in queries]
        rec = recall_at_n(ranked, queries, targets, range(1, 31)).recall
        assert all(a <= b for a, b in zip(rec, rec[1:]))

    def test_rank_only_dependence(self, small_bench):
        dataset, queries = small_bench
        ids, M = queries.image_matrix()
        index = ImageIndex.from_corpus(dataset)
        base = recall_at_n(search_many(M.T, ids, index, 10), queries, dataset, [1, 5, 10])
        scaled = recall_at_n(search_many(3.7 * M.T, ids, index, 10), queries, dataset, [1, 5, 10])
        assert base.recall == scaled.recall


class TestSparse:
    def test_full_sample_equals_full_run(self, small_bench):
        dataset, queries = small_bench
        index = build_index(dataset, "pinv")
        full = recall_at_n(run_mode("pan2pan", queries, index, "pinv", top_n=20), queries,
                           dataset)
        res = sparse_eval(queries, index, SampleEvalConfig(l=6, repetitions=1), "pinv",
                          dataset=dataset)
        assert res[0].curve.recall == full.recall
        assert res[0].std == [0.0] * 20

    def test_l_too_large(self, small_bench):
        dataset, queries = small_bench
        with pytest.raises(ValidationError, match="exceeds"):
            sparse_eval(queries, build_index(dataset, "pinv"),
                        SampleEvalConfig(l=7, repetitions=1), dataset=dataset)

    def test_sampling_keyed_by_location(self, small_bench):
        _, queries = small_bench
        a = sample_queries(queries, 3, seed=5, repetition=2)
        rev = queries.with_groups(reversed(queries.groups))
        b = sample_queries(rev, 3, seed=5, repetition=2)
        picks_a = {g.location_id: g.image_ids for g in a.groups}
        picks_b = {g.location_id: g.image_ids for g in b.groups}
        assert picks_a == picks_b
        assert all(len(v) == 3 and len(set(v)) == 3 for v in picks_a.values())

    def test_rng_streams_differ(self):
        draws = {tuple(sample_rng(0, rep, "L1").integers(0, 1 << 30, 4)) for rep in range(5)}
        assert len(draws) == 5
        assert (sample_rng(3, 1, "x").integers(0, 1 << 30, 8)
                == sample_rng(3, 1, "x").integers(0, 1 << 30, 8)).all()

    def test_csv_layout(self, small_bench):
        dataset, queries = small_bench
        res = sparse_eval(queries, build_index(dataset, "pinv"),
                          SampleEvalConfig(l=[2, 6], repetitions=2, n_values=[1, 5]),
                          dataset=dataset)
        rows = list(csv.reader(io.StringIO(sparse_results_csv(res))))
        assert rows[0] == ["l", "N", "mean_recall", "std_recall", "repetitions"]
        assert [r[:2] for r in rows[1:]] == [["2", "1"], ["2", "5"], ["6", "1"], ["6", "5"]]

    def test_invalid_config(self, small_bench):
        dataset, queries = small_bench
        with pytest.raises(ValidationError):
            sparse_eval(queries, build_index(dataset, "pinv"),
                        SampleEvalConfig(l=2, repetitions=0), dataset=dataset)


class TestToy:
    def test_figure_values(self):
        # reference heat-map values at 3 decimals
        res = toy_demo()
        U, W = res.unweighted, res.weighted
        assert U[1, 0] == pytest.approx(0.527, abs=5e-4)
        assert U[0, 0] == pytest.approx(0.278, abs=5e-4)
        assert U[6, 1] == pytest.approx(0.041, abs=5e-4)
        assert U[7, 4] == pytest.approx(0.527, abs=5e-4)
        np.testing.assert_allclose(W[4:7, 1:4], [[0.792, -0.533, 0.220],
                                                 [-0.533, 1.090, -0.533],
                                                 [0.220, -0.533, 0.792]], atol=5e-4)
        assert W[1, 0] == pytest.approx(0.527, abs=5e-4)
        assert W[0, 0] == pytest.approx(0.0, abs=5e-4)

    def test_kernel_embedding_exact(self):
        layout = figure_layout()
        res = toy_demo(layout)
        diff = layout.x_points[:, None, :] - layout.y_points[None, :, :]
        K = np.exp(-(diff ** 2).sum(-1) / 0.04)
        np.testing.assert_allclose(res.unweighted, K, atol=1e-12)

    def test_singletons_unchanged(self):
        layout = ToyLayout(np.array([[0.0, 0.0]]), np.array([[0.1, 0.0]]), ["a"], ["a"])
        res = toy_demo(layout)
        np.testing.assert_allclose(res.weighted, res.unweighted, atol=1e-12)

    @pytest.mark.parametrize("layout", [figure_layout(), bursty_layout()])
    def test_grand_sum_consistency(self, layout):
        res = toy_demo(layout)
        assert abs(res.weighted.sum() - toy_pinv_similarity(res)) <= 1e-8

    @pytest.mark.parametrize("layout", [figure_layout(), bursty_layout(), bursty_layout(seed=3)])
    def test_democratization(self, layout):
        res = toy_demo(layout)
        plain, weighted = within_cluster_means(res, layout)
        assert weighted < plain

    def test_identical_cluster_singular(self):
        layout = ToyLayout(np.array([[0.5, 0.5]] * 3), np.array([[0.5, 0.6]]), ["a"] * 3, ["a"])
        with pytest.raises(SingularityError):
            toy_demo(layout, ridge="off")
        assert np.all(np.isfinite(toy_demo(layout, ridge="auto").weighted))

    def test_csv(self):
        rows = list(csv.reader(io.StringIO(toy_demo().csv)))
        assert rows[0] == ["i", "j", "unweighted", "weighted"]
        assert len(rows) == 1 + 64
        assert rows[1 + 8][:2] == ["2", "1"]
