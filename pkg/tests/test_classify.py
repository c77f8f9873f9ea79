import numpy as np
import pytest

from fcmesh.classify import (
    Metrics,
    column_fingerprint,
    cross_validate,
    evaluate,
    predict,
    train_knn,
    train_linear_svm,
)
from fcmesh.errors import ConfigError, DataError
from fcmesh.mesh import FeatureMatrix


def _clusters(n_per_class, omega, spread=0.3, seed=0, dim=4, center_seed=100):
    """Well separated Gaussian blobs, one per class.

    Centers depend only on center_seed so distinct seeds draw fresh
    samples from the same class layout.
    """
    centers = 10.0 * np.random.default_rng(center_seed).normal(size=(omega, dim))
    rng = np.random.default_rng(seed)
    x = np.vstack([centers[c] + spread * rng.normal(size=(n_per_class, dim))
                   for c in range(omega)])
    y = np.repeat(np.arange(1, omega + 1), n_per_class)
    return x, y


class TestKnn:
    def test_k1_recovers_training_labels(self):
        x, y = _clusters(8, 3, seed=1)
        model = train_knn(x, y, k=1)
        np.testing.assert_array_equal(predict(model, x), y)

    def test_separated_clusters_generalize(self):
        x, y = _clusters(10, 3, seed=2)
        xt, yt = _clusters(5, 3, seed=3)
        model = train_knn(x, y, k=3)
        np.testing.assert_array_equal(predict(model, xt), yt)

    def test_k_equals_n_predicts_majority(self):
        x = np.arange(10, dtype=float)[:, None]
        y = np.array([1] * 7 + [2] * 3)
        model = train_knn(x, y, k=10)
        np.testing.assert_array_equal(predict(model, x), 1)

    def test_vote_tie_goes_to_smaller_label(self):
        x = np.array([[0.0], [1.0]])
        y = np.array([2, 1])
        model = train_knn(x, y, k=2)
        assert predict(model, np.array([[0.5]]))[0] == 1

    def test_distance_tie_independent_of_row_order(self):
        # two training points equidistant from the query, reversed storage
        x = np.array([[0.0], [2.0]])
        q = np.array([[1.0]])
        m1 = train_knn(x, np.array([1, 2]), k=1)
        m2 = train_knn(x[::-1].copy(), np.array([2, 1]), k=1)
        assert predict(m1, q)[0] == predict(m2, q)[0]

    def test_cosine_metric_scale_invariant(self):
        x, y = _clusters(6, 2, seed=4)
        model = train_knn(x, y, k=3, metric="cosine")
        xt = 7.0 * x
        np.testing.assert_array_equal(predict(model, xt), predict(model, x))

    def test_invalid_k(self):
        x, y = _clusters(4, 2)
        with pytest.raises(ConfigError):
            train_knn(x, y, k=0)
        with pytest.raises(ConfigError):
            train_knn(x, y, k=len(y) + 1)


class TestLinearSvm:
    def test_separable_perfect_accuracy(self):
        x, y = _clusters(12, 3, seed=5)
        model = train_linear_svm(x, y, c_reg=1.0)
        assert (predict(model, x) == y).mean() == 1.0

    def test_random_labels_near_chance(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(400, 6))
        y = rng.integers(1, 5, size=400)
        model = train_linear_svm(x, y, c_reg=0.1, seed=0)
        xt = rng.normal(size=(400, 6))
        yt = rng.integers(1, 5, size=400)
        acc = (predict(model, xt) == yt).mean()
        assert abs(acc - 0.25) < 0.10

    def test_scaling_identity(self):
        # no intercept, so x -> 10x with C -> C/100 leaves the margin
        # problem unchanged up to w -> w/10 and predictions identical
        x, y = _clusters(10, 3, spread=1.5, seed=7)
        m1 = train_linear_svm(x, y, c_reg=1.0, tol=1e-8, max_iter=20000)
        m2 = train_linear_svm(10.0 * x, y, c_reg=0.01, tol=1e-8, max_iter=20000)
        np.testing.assert_allclose(m2.weights * 10.0, m1.weights, atol=1e-5)
        xt, _ = _clusters(5, 3, spread=1.5, seed=8)
        np.testing.assert_array_equal(predict(m2, 10.0 * xt), predict(m1, xt))

    def test_deterministic_across_runs(self):
        x, y = _clusters(8, 2, spread=2.0, seed=9)
        m1 = train_linear_svm(x, y, seed=3)
        m2 = train_linear_svm(x, y, seed=3)
        np.testing.assert_array_equal(m1.weights, m2.weights)

    def test_dual_feasibility_and_margin(self):
        # separable data: trained weights should classify with positive margin
        x, y = _clusters(10, 2, spread=0.2, seed=10)
        model = train_linear_svm(x, y, c_reg=10.0, tol=1e-8, max_iter=20000)
        y_bin = np.where(y == 1, 1.0, -1.0)
        margins = y_bin * (x @ model.weights[0])
        assert margins.min() > 0.9

    def test_single_class_rejected(self):
        x = np.random.default_rng(0).normal(size=(6, 2))
        with pytest.raises(DataError):
            train_linear_svm(x, np.ones(6, dtype=int))

    def test_bad_c(self):
        x, y = _clusters(4, 2)
        with pytest.raises(ConfigError):
            train_linear_svm(x, y, c_reg=0.0)


class TestFingerprint:
    def test_mismatched_columns_rejected(self):
        rng = np.random.default_rng(11)
        f_train = FeatureMatrix(rng.normal(size=(8, 2)), ((0, 1), (1, 0)))
        f_test = FeatureMatrix(rng.normal(size=(4, 2)), ((0, 1), (2, 0)))
        y = np.array([1, 1, 1, 1, 2, 2, 2, 2])
        model = train_knn(f_train, y, k=1)
        with pytest.raises(DataError):
            predict(model, f_test)

    def test_matching_columns_accepted(self):
        rng = np.random.default_rng(12)
        cm = ((0, 1), (1, 0))
        f_train = FeatureMatrix(rng.normal(size=(8, 2)), cm)
        f_test = FeatureMatrix(rng.normal(size=(4, 2)), cm)
        y = np.array([1, 1, 1, 1, 2, 2, 2, 2])
        model = train_knn(f_train, y, k=1)
        assert predict(model, f_test).shape == (4,)

    def test_fingerprint_stable(self):
        cm = ((3, 1), (0, 2))
        assert column_fingerprint(cm) == column_fingerprint(tuple(cm))


class TestCrossValidate:
    def test_single_point_grid_returned(self):
        x, y = _clusters(10, 2, seed=13)
        best, scores = cross_validate(x, y, "knn", {"k": [3]}, folds=5)
        assert best == {"k": 3, "metric": "euclidean"}
        assert len(scores) == 1

    def test_picks_obviously_better_k(self):
        # one mislabeled point per class: k=1 memorizes it, k=5 smooths it
        x, y = _clusters(20, 2, spread=0.2, seed=14)
        y = y.copy()
        y[0], y[20] = 2, 1
        best, scores = cross_validate(x, y, "knn", {"k": [1, 5]}, folds=5, seed=0)
        import json

        key5 = json.dumps({"k": 5, "metric": "euclidean"}, sort_keys=True)
        key1 = json.dumps({"k": 1, "metric": "euclidean"}, sort_keys=True)
        assert np.mean(scores[key5]) >= np.mean(scores[key1])
        assert best["k"] == 5

    def test_deterministic(self):
        x, y = _clusters(9, 3, spread=2.0, seed=15)
        r1 = cross_validate(x, y, "svm", {"c_reg": [0.1, 1.0]}, folds=3, seed=7)
        r2 = cross_validate(x, y, "svm", {"c_reg": [0.1, 1.0]}, folds=3, seed=7)
        assert r1 == r2

    def test_class_smaller_than_folds_rejected(self):
        x = np.random.default_rng(0).normal(size=(6, 2))
        y = np.array([1, 1, 1, 1, 1, 2])
        with pytest.raises(DataError):
            cross_validate(x, y, "knn", {"k": [1]}, folds=3)


class TestEvaluate:
    def test_perfect_predictions(self):
        y = np.array([1, 2, 3, 1, 2, 3])
        m = evaluate(y, y)
        assert m.accuracy == 100.0
        assert m.macro_recall == 100.0
        np.testing.assert_array_equal(np.diag(m.confusion), [2, 2, 2])

    def test_counting_oracle(self):
        true = np.array([1, 1, 1, 2, 2, 2])
        pred = np.array([1, 1, 2, 2, 2, 1])
        m = evaluate(pred, true)
        np.testing.assert_array_equal(m.confusion, [[2, 1], [1, 2]])
        np.testing.assert_allclose(m.recall, [200 / 3, 200 / 3])
        np.testing.assert_allclose(m.precision, [200 / 3, 200 / 3])
        assert m.accuracy == pytest.approx(200 / 3)

    def test_never_predicted_class(self):
        true = np.array([1, 2, 1, 2])
        pred = np.array([1, 1, 1, 1])
        m = evaluate(pred, true)
        assert m.precision[1] == 0.0
        assert 2 in m.undefined_precision
        assert m.macro_recall == pytest.approx(50.0)

    def test_explicit_omega_pads_confusion(self):
        m = evaluate([1, 1], [1, 1], n_classes=3)
        assert m.confusion.shape == (3, 3)

    def test_to_dict_round_trip_types(self):
        m = evaluate([1, 2, 2], [1, 2, 1])
        d = m.to_dict()
        assert isinstance(d["confusion"], list)
        assert d["accuracy"] == round(m.accuracy, 2)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            evaluate([1, 2], [1])
