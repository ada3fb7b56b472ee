import numpy as np
import pytest
from sklearn.base import clone

from patientdp.data import generate_synthetic
from patientdp.estimators import PooledSGDClassifier, PrivateFederatedClassifier


def easy_arrays(seed=0, n_patients=40, per=10, dim=6, sep=5.0):
    db = generate_synthetic(n_patients, per, dim, sep, seed=seed, patient_spread=0.2)
    X, y = db.pooled()
    groups = np.concatenate([[p.patient_id] * p.n_examples for p in db.patients])
    return X, y, groups


class TestSklearnProtocol:
    def test_get_set_params_round_trip(self):
        clf = PrivateFederatedClassifier(rounds=3, seed=9)
        params = clf.get_params()
        assert params["rounds"] == 3 and params["seed"] == 9
        clf.set_params(rounds=7)
        assert clf.get_params()["rounds"] == 7

    def test_clone_preserves_params(self):
        clf = PrivateFederatedClassifier(rounds=4, noise_scales=(2.0,), seed=3)
        dup = clone(clf)
        assert dup.get_params() == clf.get_params()

    def test_score_via_classifier_mixin(self):
        X, y, groups = easy_arrays()
        clf = PooledSGDClassifier(rounds=400, learning_rate=1.5, seed=1).fit(X, y)
        assert clf.score(X, y) > 0.9


class TestPrivateFederatedClassifier:
    def test_fit_predict_and_privacy_attributes(self):
        X, y, groups = easy_arrays()
        clf = PrivateFederatedClassifier(
            rounds=20, sampling_ratio=0.3, learning_rate=1.0, seed=2
        )
        clf.fit(X, y, groups=groups)
        assert clf.theta_.shape == (X.shape[1] + 1,)
        assert clf.n_features_in_ == X.shape[1]
        assert clf.epsilon_ > 0
        assert 0 < clf.delta_ < 1
        # default delta uses the patient count, not the row count
        assert clf.delta_ == pytest.approx(40 ** -1.1)
        preds = clf.predict(X)
        assert set(np.unique(preds)) <= {0, 1}
        proba = clf.predict_proba(X)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, rtol=1e-12)

    def test_groups_default_is_one_patient_per_row(self):
        X, y, _ = easy_arrays(n_patients=10, per=3)
        clf = PrivateFederatedClassifier(rounds=2, sampling_ratio=0.5, seed=0)
        clf.fit(X, y)
        assert clf.delta_ == pytest.approx(len(y) ** -1.1)

    def test_round_logs_recorded(self):
        X, y, groups = easy_arrays()
        clf = PrivateFederatedClassifier(rounds=5, sampling_ratio=0.5, seed=4)
        clf.fit(X, y, groups=groups)
        assert len(clf.round_logs_) == 5

    def test_deterministic_given_seed(self):
        X, y, groups = easy_arrays()
        a = PrivateFederatedClassifier(rounds=6, sampling_ratio=0.4, seed=5).fit(
            X, y, groups=groups
        )
        b = PrivateFederatedClassifier(rounds=6, sampling_ratio=0.4, seed=5).fit(
            X, y, groups=groups
        )
        np.testing.assert_array_equal(a.theta_, b.theta_)

    def test_mlp_variant(self):
        X, y, groups = easy_arrays()
        clf = PrivateFederatedClassifier(
            model="mlp",
            hidden_dim=4,
            rounds=10,
            sampling_ratio=0.4,
            learning_rate=1.0,
            seed=6,
        ).fit(X, y, groups=groups)
        assert clf.spec_.param_count == clf.theta_.shape[0]

    def test_predict_before_fit_rejected(self):
        with pytest.raises(RuntimeError):
            PrivateFederatedClassifier().predict(np.zeros((2, 3)))


class TestPooledSGDClassifier:
    def test_learns_easy_problem(self):
        X, y, _ = easy_arrays()
        clf = PooledSGDClassifier(rounds=600, learning_rate=1.5, seed=7).fit(X, y)
        assert clf.score(X, y) > 0.95
        assert not hasattr(clf, "epsilon_")

    def test_deterministic(self):
        X, y, _ = easy_arrays()
        a = PooledSGDClassifier(rounds=100, seed=8).fit(X, y)
        b = PooledSGDClassifier(rounds=100, seed=8).fit(X, y)
        np.testing.assert_array_equal(a.theta_, b.theta_)


class TestValidation:
    def test_rejects_non_finite(self):
        X = np.array([[0.1, np.nan], [0.2, 0.3]])
        with pytest.raises(ValueError):
            PrivateFederatedClassifier(rounds=1).fit(X, np.array([0, 1]))

    def test_rejects_non_binary_labels(self):
        X = np.random.default_rng(0).random((4, 2))
        with pytest.raises(ValueError):
            PrivateFederatedClassifier(rounds=1).fit(X, np.array([0, 1, 2, 1]))

    def test_rejects_misaligned_groups(self):
        X = np.random.default_rng(0).random((4, 2))
        y = np.array([0, 1, 0, 1])
        with pytest.raises(ValueError):
            PrivateFederatedClassifier(rounds=1).fit(X, y, groups=["a", "b"])

    def test_rejects_1d_features(self):
        with pytest.raises(ValueError):
            PooledSGDClassifier(rounds=1).fit(np.zeros(4), np.zeros(4))
