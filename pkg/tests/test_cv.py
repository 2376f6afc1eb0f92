import json
import math
import statistics

import numpy as np
import pytest

from fel.config import TrainConfig
from fel.cv import (
    CVReport, DisjointnessError, RunResult, compare_arms, cross_validate, make_splits, mean_std, pooled_sigma,
)
from fel.datagen.synthetic import check_disjoint_split
from fel.model import init_model
from fel.train import Metrics

QUICK = TrainConfig(lr=1e-2, batch_size=8, epochs=1, scope="pred")


def fake_report(accs, task="ct"):
    runs = [RunResult(i, 0, Metrics(a, 2.0, math.log(2.0), 10, []), 1, 1, 5, 5) for i, a in enumerate(accs)]
    return CVReport(runs, task, "standard")


class TestSplits:
    def test_standard_partitions(self):
        splits = list(make_splits(23, 5, seed=0, split_mode="standard"))
        assert len(splits) == 5
        tests = np.concatenate([te for _, _, _, te in splits])
        assert sorted(tests.tolist()) == list(range(23))
        for _, tr, dv, te in splits:
            parts = [set(tr), set(dv), set(te)]
            assert sum(map(len, parts)) == 23 and set().union(*parts) == set(range(23))

    def test_standard_train_size(self):
        for _, tr, _, _ in make_splits(50, 5, 0, "standard", train_size=12):
            assert tr.size == 12

    def test_disjoint_mode_samples(self):
        splits = list(make_splits(40, 5, 3, "ct_disjoint", train_size=10))
        assert len(splits) == 5
        for _, tr, dv, te in splits:
            assert te is None and tr.size == 10 and dv.size == 30 and not set(tr) & set(dv)
        assert len({tuple(tr) for _, tr, _, _ in splits}) > 1

    @pytest.mark.parametrize("n, k", [(3, 5), (10, 1)])
    def test_bad_k(self, n, k):
        with pytest.raises(ValueError):
            list(make_splits(n, k, 0, "standard"))

    def test_train_size_leaves_no_dev(self):
        with pytest.raises(ValueError):
            list(make_splits(10, 2, 0, "ct_disjoint", train_size=10))


class TestAggregates:
    def test_constant_metric_zero_sigma(self):
        assert fake_report([0.7] * 10).accuracy == (pytest.approx(0.7), 0.0)

    def test_matches_independent_recomputation(self):
        accs = [0.61, 0.7, 0.66, 0.58, 0.73, 0.69]
        m, s = fake_report(accs).accuracy
        assert m == pytest.approx(statistics.mean(accs), abs=1e-12)
        assert s == pytest.approx(statistics.stdev(accs), abs=1e-12)

    def test_single_run(self):
        assert mean_std([0.4]) == (0.4, 0.0)

    def test_json_shape(self):
        doc = json.loads(fake_report([0.5, 0.7]).to_json())
        assert len(doc["runs"]) == 2 and doc["aggregate"]["n_runs"] == 2
        assert doc["aggregate"]["accuracy_mean"] == pytest.approx(0.6)


class TestCrossValidate:
    def test_ten_runs_and_disjoint_split(self, toy_ws, toy_model_cfg):
        model = init_model(toy_model_cfg, 0)
        rep = cross_validate(model, toy_ws.vocab, toy_ws.ct_pool, "ct", 5, [0, 1], QUICK, "ct_disjoint",
                             toy_ws.ct_test, train_size=10)
        assert len(rep.runs) == 10
        assert sorted((r.fold, r.seed) for r in rep.runs) == sorted((f, s) for s in (0, 1) for f in range(5))
        assert check_disjoint_split([x.query for x in toy_ws.ct_pool], [x.query for x in toy_ws.ct_test])

    def test_base_model_untouched(self, toy_ws, toy_model_cfg):
        model = init_model(toy_model_cfg, 0)
        before = model.snapshot()
        cross_validate(model, toy_ws.vocab, toy_ws.ad_set, "ad", 2, [0], QUICK, "standard")
        assert all(np.array_equal(model[n].data, a) for n, a in before.items())

    def test_order_independent(self, toy_ws, toy_model_cfg):
        model = init_model(toy_model_cfg, 0)
        shuffled = [toy_ws.ad_set[i] for i in np.random.default_rng(1).permutation(len(toy_ws.ad_set))]
        a = cross_validate(model, toy_ws.vocab, toy_ws.ad_set, "ad", 3, [4], QUICK, "standard")
        b = cross_validate(model, toy_ws.vocab, shuffled, "ad", 3, [4], QUICK, "standard")
        assert a.to_json() == b.to_json()

    def test_overlap_named(self, toy_ws, toy_model_cfg):
        model = init_model(toy_model_cfg, 0)
        with pytest.raises(DisjointnessError, match="share non-stopword unigrams"):
            cross_validate(model, toy_ws.vocab, toy_ws.ct_pool, "ct", 2, [0], QUICK, "ct_disjoint",
                           toy_ws.ct_pool[:5], train_size=30)

    def test_disjoint_mode_needs_test_set(self, toy_ws, toy_model_cfg):
        with pytest.raises(ValueError):
            cross_validate(init_model(toy_model_cfg, 0), toy_ws.vocab, toy_ws.ct_pool, "ct", 2, [0], QUICK,
                           "ct_disjoint")


class TestCompareArms:
    def test_self_comparison_is_zero(self):
        rep = fake_report([0.5, 0.6, 0.7])
        out = compare_arms({"a": {50: rep}, "b": {50: rep}}, {"a": 100, "b": 100})
        assert all(c.diff == 0 for c in out.comparisons)

    def test_pooled_sigma(self):
        a, b = fake_report([0.8, 0.9, 0.85]), fake_report([0.5, 0.7, 0.6])
        out = compare_arms({"a": {50: a}, "b": {50: b}}, {"a": 1, "b": 1})
        c = out.comparison("a", "b", 50)
        sa, sb = statistics.stdev([0.8, 0.9, 0.85]), statistics.stdev([0.5, 0.7, 0.6])
        assert c.pooled_sigma == pytest.approx(math.sqrt((sa ** 2 + sb ** 2) / 2))
        assert c.diff == pytest.approx(0.85 - 0.6) and c.separated
        assert pooled_sigma(3.0, 4.0) == pytest.approx(math.sqrt(12.5))

    def test_mismatched_budgets(self):
        rep = fake_report([0.5])
        with pytest.raises(ValueError, match="budget"):
            compare_arms({"a": {50: rep}, "b": {50: rep}}, {"a": 100, "b": 200})

    def test_tsv(self):
        rep = fake_report([0.5, 0.5])
        tsv = compare_arms({"a": {25: rep}}, {"a": 1}).to_tsv().splitlines()
        assert tsv[0].split("\t") == ["arm_a", "arm_b", "size", "mean_a", "mean_b", "diff", "pooled_sigma"]
        assert tsv[1].split("\t")[:3] == ["a", "a", "25"]
