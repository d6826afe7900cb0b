import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from faceinteract import learn
from faceinteract.learn import (
    BinarySvm,
    DegenerateTrainingError,
    SvmParams,
    decision,
    grid_search,
    kernel_matrix,
    solve_dual,
    train_binary,
    train_channel,
    train_fusion,
)
from faceinteract.metrics import average_precision, per_class_ap

XOR_X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
XOR_Y = np.array([-1.0, -1.0, 1.0, 1.0])


def blobs(rng, n=100, sep=6.0, dim=2):
    a = rng.normal(0, 1, (n, dim))
    b = rng.normal(0, 1, (n, dim))
    b[:, 0] += sep
    return np.vstack([a, b]), np.r_[-np.ones(n), np.ones(n)]


def qp_reference(K, y, C):
    """Dual solution from a generic interior-point QP solver."""
    cvxopt = pytest.importorskip("cvxopt")
    from cvxopt import matrix, solvers

    solvers.options["show_progress"] = False
    solvers.options["abstol"] = 1e-12
    solvers.options["reltol"] = 1e-12
    solvers.options["feastol"] = 1e-12
    n = y.size
    P = matrix(np.outer(y, y) * K)
    q = matrix(-np.ones(n))
    G = matrix(np.vstack([-np.eye(n), np.eye(n)]))
    h = matrix(np.r_[np.zeros(n), np.full(n, C)])
    A = matrix(y.reshape(1, -1))
    b = matrix(0.0)
    return np.array(solvers.qp(P, q, G, h, A, b)["x"]).ravel()


def assert_kkt(model_scores, y, alpha, C, tol):
    yf = y * model_scores
    at_zero = alpha <= 0
    at_c = alpha >= C
    free = ~(at_zero | at_c)
    assert np.all(yf[at_zero] >= 1 - tol - 1e-9)
    assert np.all(yf[at_c] <= 1 + tol + 1e-9)
    assert np.all(np.abs(yf[free] - 1) <= tol + 1e-9)


class TestBinary:
    def test_separable_pair(self):
        m = train_binary([[0, 0], [1, 1]], [-1, 1], SvmParams(cost=10, gamma=1))
        assert np.array_equal(np.sign(m.decision([[0, 0], [1, 1]])), [-1, 1])

    def test_xor_matches_exact_solution(self):
        gamma, C = 1.0, 10.0
        m = train_binary(XOR_X, XOR_Y, SvmParams(cost=C, gamma=gamma, tol=1e-10))
        closed_form = 1.0 / (1.0 - np.exp(-gamma)) ** 2
        np.testing.assert_allclose(m.dual_coef, closed_form, rtol=1e-8)
        K = kernel_matrix(XOR_X, XOR_X, m.params)
        np.testing.assert_allclose(qp_reference(K, XOR_Y, C), closed_form, rtol=1e-6)
        assert abs(m.bias) < 1e-8
        assert np.array_equal(np.sign(m.decision(XOR_X)), XOR_Y)

    def test_xor_cost_bound_active(self):
        m = train_binary(XOR_X, XOR_Y, SvmParams(cost=1.0, gamma=1.0, tol=1e-10))
        np.testing.assert_allclose(m.dual_coef, 1.0)

    def test_blobs_generalize(self):
        rng = np.random.default_rng(2024)
        X, y = blobs(rng)
        Xt, yt = blobs(rng)
        m = train_binary(X, y, SvmParams(cost=1.0, gamma=0.5))
        assert np.mean(np.sign(m.decision(Xt)) == yt) >= 0.95

    def test_kkt_and_monotone(self, rng):
        X = rng.normal(size=(120, 3))
        y = np.where(X[:, 0] + 0.5 * rng.normal(size=120) > 0, 1.0, -1.0)
        for C in (0.1, 1.0, 10.0):
            params = SvmParams(cost=C, gamma=0.5)
            K = kernel_matrix(X, X, params)
            res = solve_dual(K, y, params)
            assert res.converged and res.kkt_gap < params.tol
            assert np.all(np.diff(res.history) >= -1e-12 * (1 + np.abs(res.history[1:])))
            assert np.all((res.alpha >= 0) & (res.alpha <= C))
            scores = (K * (res.alpha * y)).sum(axis=1) + res.bias
            assert_kkt(scores, y, res.alpha, C, params.tol)
            assert abs(np.dot(res.alpha, y)) < 1e-9

    def test_single_class_rejected(self):
        with pytest.raises(DegenerateTrainingError):
            train_binary([[0.0], [1.0]], [1, 1])

    def test_non_convergence_flagged(self, rng):
        X, y = blobs(rng, n=40, sep=0.5)
        m = train_binary(X, y, SvmParams(cost=100, gamma=4, max_passes=3))
        assert not m.converged and m.n_iter == 3

    def test_deterministic(self, rng):
        X, y = blobs(rng, n=50, sep=1.0)
        a = train_binary(X, y, SvmParams(cost=1, gamma=1), seed=3)
        b = train_binary(X, y, SvmParams(cost=1, gamma=1), seed=3)
        assert np.array_equal(a.coef, b.coef) and a.bias == b.bias

    def test_boolean_labels(self):
        m = train_binary(XOR_X, XOR_Y > 0, SvmParams(cost=10, gamma=1))
        assert np.array_equal(np.sign(m.decision(XOR_X)), XOR_Y)


class TestDecision:
    def test_hand_computed(self):
        params = SvmParams(cost=5.0, gamma=0.5)
        m = BinarySvm(np.array([[0.0, 0.0], [2.0, 0.0]]), np.array([1.5, -0.5]), 0.25, params)
        x = np.array([1.0, 1.0])
        expected = 1.5 * np.exp(-0.5 * 2.0) - 0.5 * np.exp(-0.5 * 2.0) + 0.25
        assert decision(m, x) == pytest.approx(expected, abs=1e-15)

    def test_far_point_scores_bias(self):
        m = BinarySvm(np.array([[0.0], [1.0]]), np.array([1.0, -1.0]), 0.7, SvmParams(cost=1, gamma=50))
        assert decision(m, [100.0]) == 0.7

    def test_support_vectors_score_their_label(self):
        m = train_binary(XOR_X, XOR_Y, SvmParams(cost=1e6, gamma=1))
        assert np.array_equal(np.sign(m.decision(m.support_vectors)), np.sign(m.coef))

    def test_storage_order_invariance(self, rng):
        sv = rng.normal(size=(30, 4))
        coef = rng.uniform(-1, 1, 30)
        params = SvmParams(cost=1.0, gamma=0.3)
        perm = rng.permutation(30)
        X = rng.normal(size=(10, 4))
        a = BinarySvm(sv, coef, 0.1, params).decision(X)
        b = BinarySvm(sv[perm], coef[perm], 0.1, params).decision(X)
        assert np.array_equal(a, b)

    def test_dimension_mismatch(self):
        m = train_binary(XOR_X, XOR_Y, SvmParams(cost=10, gamma=1))
        with pytest.raises(ValueError):
            m.decision(np.zeros((1, 3)))

    def test_serialization_round_trip(self):
        m = train_binary(XOR_X, XOR_Y, SvmParams(cost=10, gamma=1))
        back = BinarySvm.from_dict(m.to_dict())
        assert np.array_equal(back.decision(XOR_X), m.decision(XOR_X))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 5)),
              elements=st.floats(-1e3, 1e3)), st.floats(1e-3, 10))
def test_kernel_symmetric_unit_diagonal(X, gamma):
    K = kernel_matrix(X, X, SvmParams(gamma=gamma))
    assert np.array_equal(K, K.T)
    assert np.all(np.diag(K) == 1.0)


def three_class_data(rng, n=30):
    centers = np.array([[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]])
    X = np.vstack([c + rng.normal(0, 0.7, (n, 2)) for c in centers])
    return X, np.repeat(np.arange(3), n)


class TestChannel:
    def test_three_class_separable(self, rng):
        X, labels = three_class_data(rng)
        model = train_channel(X, labels, ["a", "b", "c"], SvmParams(cost=10, gamma=0.5))
        assert len(model.models) == 3
        scores = model.decision_matrix(X)
        assert np.array_equal(scores.argmax(axis=1), labels)

    def test_two_class_opposite_signs(self, rng):
        X, labels = three_class_data(rng)
        keep = labels < 2
        model = train_channel(X[keep], labels[keep], ["a", "b"], SvmParams(cost=10, gamma=0.5))
        s = model.decision_matrix(X[keep])
        assert np.all(np.sign(s[:, 0]) == -np.sign(s[:, 1]))

    def test_missing_class(self, rng):
        X, labels = three_class_data(rng)
        with pytest.raises(DegenerateTrainingError, match="'d'"):
            train_channel(X, labels, ["a", "b", "c", "d"])

    def test_threads_do_not_change_result(self, rng):
        X, labels = three_class_data(rng)
        a = train_channel(X, labels, ["a", "b", "c"], threads=1).decision_matrix(X)
        b = train_channel(X, labels, ["a", "b", "c"], threads=3).decision_matrix(X)
        assert np.array_equal(a, b)

    def test_serialization(self, rng):
        X, labels = three_class_data(rng)
        m = train_channel(X, labels, ["a", "b", "c"])
        back = learn.TrainedChannelModel.from_dict(m.to_dict())
        assert np.array_equal(back.decision_matrix(X), m.decision_matrix(X))


class TestGridSearch:
    def test_single_point(self, rng):
        X, labels = three_class_data(rng, 10)
        p = grid_search(X, labels, ["a", "b", "c"], costs=[3.0], gammas=[0.2])
        assert (p.cost, p.gamma) == (3.0, 0.2)

    def test_selects_only_perfect_point(self, rng):
        # XOR of four clusters: a near-linear kernel cannot rank it, a local one can
        centers = np.array([[0, 0], [4, 4], [0, 4], [4, 0]], dtype=float)
        X = np.vstack([c + rng.normal(0, 0.3, (15, 2)) for c in centers])
        labels = np.repeat([0, 0, 1, 1], 15)
        p, table = grid_search(X, labels, ["neg", "pos"], costs=[1.0], gammas=[1e-6, 1.0], return_table=True)
        assert table[(1.0, 1.0)] == 1.0 and table[(1.0, 1e-6)] < 1.0
        assert p.gamma == 1.0

    def test_tie_prefers_smaller_cost(self, rng):
        X, labels = three_class_data(rng, 15)
        p, table = grid_search(X, labels, ["a", "b", "c"], costs=[10.0, 1.0], gammas=[0.5], return_table=True)
        assert table[(1.0, 0.5)] == table[(10.0, 0.5)] == 1.0
        assert p.cost == 1.0

    def test_best_matches_table(self, rng):
        X = rng.normal(size=(60, 3))
        labels = np.repeat(np.arange(3), 20)
        p, table = grid_search(X, labels, ["a", "b", "c"], costs=[0.1, 1], gammas=[0.1, 1], return_table=True)
        best = max(table.values())
        winners = sorted(k for k, v in table.items() if v == best)
        assert (p.cost, p.gamma) == winners[0]


class TestFusion:
    def _two_channel(self, rng, n_per=40, n_classes=3):
        labels = np.repeat(np.arange(n_classes), n_per)
        informative = np.eye(n_classes)[labels] * 4.0 + rng.normal(0, 0.2, (labels.size, n_classes))
        noise = rng.normal(size=(labels.size, n_classes))
        return labels, informative, noise

    def test_informative_channel_dominates(self, rng):
        labels, informative, noise = self._two_channel(rng)
        S = np.hstack([informative, noise])
        fm = train_fusion(S, labels, ["a", "b", "c"], ["good", "noise"])
        fused = fm.decision_matrix(S)
        assert np.all(per_class_ap(fused, labels, 3) == 1.0)
        assert np.all(per_class_ap(informative, labels, 3) == 1.0)
        for c in range(3):
            assert abs(fm.weights[c, c]) > np.abs(fm.weights[c, 3:]).max()

    def test_single_channel_no_harm(self, rng):
        labels = np.repeat(np.arange(3), 50)
        S = np.eye(3)[labels] + rng.normal(0, 0.8, (150, 3))
        fm = train_fusion(S, labels, ["a", "b", "c"], ["only"])
        single = per_class_ap(S, labels, 3).mean()
        fused = per_class_ap(fm.decision_matrix(S), labels, 3).mean()
        assert fused >= single - 0.02

    def test_zero_variance_column(self, rng):
        labels, informative, _ = self._two_channel(rng)
        S = np.hstack([informative, np.full((labels.size, 3), 2.5)])
        fm = train_fusion(S, labels, ["a", "b", "c"], ["good", "const"])
        assert np.all(np.abs(fm.weights[:, 3:]) < 1e-12)
        assert np.all(np.isfinite(fm.decision_matrix(S)))

    def test_dimension_mismatch(self, rng):
        labels, informative, _ = self._two_channel(rng)
        with pytest.raises(ValueError):
            train_fusion(informative, labels, ["a", "b", "c"], ["x", "y"])
        fm = train_fusion(informative, labels, ["a", "b", "c"], ["x"])
        with pytest.raises(ValueError):
            fm.decision_matrix(np.zeros((2, 4)))


def test_stratified_assign_balance(rng):
    labels = rng.integers(0, 4, 203)
    folds = learn.stratified_assign(labels, 5, seed=1)
    for c in range(4):
        counts = np.bincount(folds[labels == c], minlength=5)
        assert counts.max() - counts.min() <= 1
    assert np.array_equal(folds, learn.stratified_assign(labels, 5, seed=1))


def test_stacked_fit_predict(rng):
    X, labels = three_class_data(rng, 20)
    stack = learn.fit_stack({"a": X, "b": X + rng.normal(0, 3, X.shape)}, labels, ["p", "q", "r"],
                            {"a": SvmParams(1, 0.5), "b": SvmParams(1, 0.5)})
    per_channel, fused = stack.predict({"a": X, "b": X})
    assert fused.shape == (60, 3) and set(per_channel) == {"a", "b"}
    assert average_precision(fused[:, 0], labels == 0) > 0.9
