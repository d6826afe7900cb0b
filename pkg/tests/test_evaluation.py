import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faceinteract import evaluation
from faceinteract.data import DatasetManifest, FaceBox, ImageRecord, ValidationError
from faceinteract.evaluation import EvalConfig, EvalReport, format_table, make_folds, mean_ap, run_cv
from faceinteract.learn import SvmParams
from faceinteract.metrics import UndefinedAPError, average_precision, per_class_ap
from oracles import all_label_patterns, oracle_ap


def manifest_of(counts, names=None):
    names = names or [f"c{k}" for k in range(len(counts))]
    face = (FaceBox(10.0, 10.0, 5.0, 5.0, 0),)
    records = [ImageRecord(f"{names[c]}-{i:04d}", 100.0, 100.0, names[c], face)
               for c, n in enumerate(counts) for i in range(n)]
    return DatasetManifest(tuple(records), tuple(names))


FIXED = SvmParams(cost=1.0, gamma=0.5)


class TestAveragePrecision:
    def test_exhaustive_oracle(self):
        for pattern in all_label_patterns(8):
            n = len(pattern)
            scores = np.arange(n, 0, -1, dtype=float)
            assert abs(average_precision(scores, np.array(pattern, bool)) - oracle_ap(pattern)) <= 1e-12

    def test_hand_case(self):
        assert average_precision([3, 2, 1], [1, 0, 1]) == pytest.approx(5 / 6, abs=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 7, 50])
    def test_single_positive_last(self, n):
        pos = np.zeros(n, bool)
        pos[-1] = True
        assert average_precision(-np.arange(n, dtype=float), pos) == pytest.approx(1 / n)

    def test_no_positives(self):
        with pytest.raises(UndefinedAPError):
            average_precision([1.0, 2.0], [False, False])

    def test_ties_keep_input_order(self):
        assert average_precision([1.0, 1.0, 1.0], [0, 1, 0]) == 0.5
        assert average_precision([1.0, 1.0, 1.0], [1, 0, 0]) == 1.0

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(-50, 50), st.booleans()), min_size=1, max_size=30)
           .filter(lambda xs: any(p for _, p in xs)))
    def test_monotone_transform_invariance(self, pairs):
        s = np.array([p[0] for p in pairs], float)
        pos = np.array([p[1] for p in pairs])
        a = average_precision(s, pos)
        assert average_precision(np.exp(s / 10) * 3 + 1, pos) == a
        assert average_precision(s ** 3 - 7, pos) == a

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 10**6), st.booleans()), min_size=1, max_size=40,
                    unique_by=lambda t: t[0]).filter(lambda xs: any(p for _, p in xs)))
    def test_matches_sklearn_without_ties(self, pairs):
        skm = pytest.importorskip("sklearn.metrics")
        s = np.array([p[0] for p in pairs], float)
        pos = np.array([p[1] for p in pairs])
        assert average_precision(s, pos) == pytest.approx(skm.average_precision_score(pos, s), abs=1e-12)

    def test_per_class(self):
        S = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.3]])
        np.testing.assert_allclose(per_class_ap(S, [0, 1, 0], 2), [1.0, 1.0])


class TestFolds:
    def test_balanced(self):
        m = manifest_of([150] * 10)
        plan = make_folds(m, 5, seed=0)
        folds = plan.fold_array(m.ids())
        labels = m.labels()
        for c in range(10):
            assert np.array_equal(np.bincount(folds[labels == c], minlength=5), [30] * 5)

    def test_deterministic_and_seed_dependent(self):
        m = manifest_of([20, 20])
        assert make_folds(m, 5, 3).assignments == make_folds(m, 5, 3).assignments
        assert make_folds(m, 5, 3).assignments != make_folds(m, 5, 4).assignments

    def test_small_class(self):
        with pytest.raises(ValidationError, match="c1"):
            make_folds(manifest_of([10, 3]), 5)


def test_mean_ap():
    assert mean_ap([0.5, 1.0, 0.0]) == 0.5


class TestRunCv:
    def test_noise_channel_near_chance(self):
        m = manifest_of([30] * 5)
        X = np.random.default_rng(7).normal(size=(150, 6))
        rep = run_cv(m, {"noise": X}, EvalConfig(params={"noise": FIXED}))
        assert abs(rep.map("noise") - 0.2) <= 0.07

    def test_identical_channels_fuse_to_same(self):
        m = manifest_of([25] * 3)
        rng = np.random.default_rng(3)
        X = np.eye(3)[m.labels()] + rng.normal(0, 0.9, (75, 3))
        rep = run_cv(m, {"a": X, "b": X.copy()}, EvalConfig(params={"a": FIXED, "b": FIXED}))
        assert rep.ap["a"] == rep.ap["b"]
        assert abs(rep.map("fused") - rep.map("a")) <= 0.05

    def test_map_is_mean_of_aps(self):
        m = manifest_of([10] * 3)
        X = np.random.default_rng(0).normal(size=(30, 2))
        rep = run_cv(m, {"x": X}, EvalConfig(params={"x": FIXED}))
        for row in ("x", "fused"):
            assert rep.map(row) == pytest.approx(np.mean(rep.ap[row]), abs=1e-15)
        assert set(rep.ap) == {"x", "fused"}

    def test_no_leakage(self, monkeypatch):
        # column 0 carries the row index so every training call can be audited
        m = manifest_of([10] * 3)
        X = np.column_stack([np.arange(30.0), np.random.default_rng(1).normal(size=(30, 2))])
        seen = []
        real_grid, real_fit = evaluation.grid_search, evaluation.fit_stack

        def spy_grid(Xtr, *a, **k):
            seen.append(set(Xtr[:, 0].astype(int)))
            return real_grid(Xtr, *a, **k)

        def spy_fit(mats, *a, **k):
            seen.append(set(mats["x"][:, 0].astype(int)))
            return real_fit(mats, *a, **k)

        monkeypatch.setattr(evaluation, "grid_search", spy_grid)
        monkeypatch.setattr(evaluation, "fit_stack", spy_fit)
        run_cv(m, {"x": X}, EvalConfig(costs=(1.0,), gammas=(0.5, 1.0), inner_folds=3))
        folds = make_folds(m, 5, 0).fold_array(m.ids())
        assert len(seen) == 10
        for f in range(5):
            held_out = set(np.flatnonzero(folds == f))
            for rows in seen[2 * f: 2 * f + 2]:
                assert rows.isdisjoint(held_out)
                assert len(rows) == 24

    def test_rows_must_align(self):
        m = manifest_of([10] * 2)
        with pytest.raises(ValidationError):
            run_cv(m, {"x": np.zeros((5, 2))})

    def test_report_round_trip_and_table(self):
        m = manifest_of([10] * 2, names=["alpha", "beta"])
        X = np.random.default_rng(2).normal(size=(20, 2))
        rep = run_cv(m, {"x": X}, EvalConfig(params={"x": FIXED}))
        d = json.loads(json.dumps(rep.to_dict()))
        back = EvalReport.from_dict(d)
        assert back.ap == rep.ap and back.ranked == rep.ranked
        table = format_table(rep)
        lines = table.splitlines()
        assert len(lines) == 4 and lines[-1].startswith("mAP")
        assert f"{100 * rep.map('fused'):.2f}" in lines[-1]

    def test_report_rejects_other_formats(self):
        with pytest.raises(ValidationError):
            EvalReport.from_dict({"format": "something-else"})
