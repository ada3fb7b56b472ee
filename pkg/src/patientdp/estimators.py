"""Scikit-learn style estimators wrapping the two training engines.

Both classifiers follow the standard fit/predict contract (plus
``predict_proba`` and the inherited ``get_params``/``set_params``), so they
compose with pipelines, grid search, and cross-validation. Patient
membership is passed to ``fit`` through the ``groups`` keyword, mirroring
the convention of sklearn's grouped splitters; omitting it treats every
row as its own patient.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import models
from ._validation import check_features, check_groups, check_labels
from .accounting import PrivacyAccountant
from .data import PatientDatabase, PatientRecord
from .models import ModelSpec
from .training import TrainConfig, train_private, train_sgd

__all__ = ["PrivateFederatedClassifier", "PooledSGDClassifier"]


def _database_from_arrays(X, y, groups) -> PatientDatabase:
    order: list[str] = []
    rows: dict[str, list[int]] = {}
    for i, g in enumerate(groups):
        if g not in rows:
            rows[g] = []
            order.append(g)
        rows[g].append(i)
    patients = tuple(
        PatientRecord(g, X[rows[g]], y[rows[g]]) for g in order
    )
    return PatientDatabase(patients, X.shape[1])


class _BinaryModelMixin:
    """Shared prediction plumbing; subclasses set spec_ and theta_ in fit."""

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_features(X)
        p = models.predict_proba(self.spec_, self.theta_, X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)

    def _check_fitted(self):
        if not hasattr(self, "theta_"):
            raise RuntimeError("estimator is not fitted; call fit first")

    def _make_spec(self, n_features: int) -> ModelSpec:
        return ModelSpec(
            kind=self.model,
            input_dim=n_features,
            hidden_dim=self.hidden_dim if self.model == "mlp" else None,
            activation=self.activation,
        )


class PrivateFederatedClassifier(_BinaryModelMixin, BaseEstimator, ClassifierMixin):
    """Patient-level differentially private federated classifier.

    Each round, a Bernoulli sample of patients locally train copies of the
    model; their clipped updates are averaged, one Gaussian-noisy candidate
    per entry of ``noise_scales`` is formed, and the applied candidate is
    chosen by an exponential mechanism with per-round budget
    ``selection_epsilon``. The privacy cost is tracked by a moments
    accountant and exposed as ``epsilon_`` / ``delta_`` after fitting.

    Parameters mirror the training loop; ``delta`` defaults to
    ``n_patients ** -1.1`` at fit time when left as None.
    """

    def __init__(
        self,
        model: str = "logistic",
        hidden_dim: int = 8,
        activation: str = "tanh",
        sampling_ratio: float = 0.1,
        rounds: int = 100,
        noise_scales: tuple[float, ...] = (3.0, 1.0),
        selection_epsilon: float = 0.31622776601683794,
        update_clip: float = 5.0,
        objective_clip: float = 3.0,
        learning_rate: float = 0.5,
        local_epochs: int = 1,
        local_batch: int = 16,
        delta: float | None = None,
        seed: int = 0,
    ):
        self.model = model
        self.hidden_dim = hidden_dim
        self.activation = activation
        self.sampling_ratio = sampling_ratio
        self.rounds = rounds
        self.noise_scales = noise_scales
        self.selection_epsilon = selection_epsilon
        self.update_clip = update_clip
        self.objective_clip = objective_clip
        self.learning_rate = learning_rate
        self.local_epochs = local_epochs
        self.local_batch = local_batch
        self.delta = delta
        self.seed = seed

    def fit(self, X, y, groups=None):
        X = check_features(X)
        y = check_labels(y, X.shape[0])
        groups = check_groups(groups, X.shape[0])
        db = _database_from_arrays(X, y, groups)
        spec = self._make_spec(X.shape[1])
        cfg = TrainConfig(
            sampling_ratio=self.sampling_ratio,
            rounds=self.rounds,
            noise_scales=tuple(self.noise_scales),
            eps_select=self.selection_epsilon,
            update_clip=self.update_clip,
            objective_clip=self.objective_clip,
            learning_rate=self.learning_rate,
            local_epochs=self.local_epochs,
            local_batch=self.local_batch,
            seed=self.seed,
        )
        delta = self.delta if self.delta is not None else db.n_patients ** -1.1
        accountant = PrivacyAccountant(
            sampling_ratio=cfg.sampling_ratio,
            noise_scales=cfg.noise_scales,
            eps_select=cfg.eps_select,
            target_delta=delta,
        )
        round_logs: list[dict] = []
        self.theta_ = train_private(
            spec, db, cfg, accountant, metrics_sink=round_logs.append
        )
        self.spec_ = spec
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        self.accountant_ = accountant
        spend = accountant.spend()
        self.epsilon_ = spend.epsilon
        self.delta_ = spend.delta
        self.round_logs_ = round_logs
        return self


class PooledSGDClassifier(_BinaryModelMixin, BaseEstimator, ClassifierMixin):
    """Non-private mini-batch SGD baseline over the pooled example set."""

    def __init__(
        self,
        model: str = "logistic",
        hidden_dim: int = 8,
        activation: str = "tanh",
        rounds: int = 500,
        batch_size: int = 32,
        learning_rate: float = 0.5,
        seed: int = 0,
    ):
        self.model = model
        self.hidden_dim = hidden_dim
        self.activation = activation
        self.rounds = rounds
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, X, y, groups=None):
        X = check_features(X)
        y = check_labels(y, X.shape[0])
        groups = check_groups(groups, X.shape[0])
        db = _database_from_arrays(X, y, groups)
        spec = self._make_spec(X.shape[1])
        self.theta_ = train_sgd(
            spec,
            db,
            rounds=self.rounds,
            batch_size=min(self.batch_size, db.total_examples),
            gamma=self.learning_rate,
            seed=self.seed,
        )
        self.spec_ = spec
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        return self
