"""scikit-learn compatible wrappers around the estimators and the DTW clustering."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..dtw import dtw_cost, dtw_kmeans
from .cnn import cnn_forward
from .pr import N_INPUTS, fit_pr
from .train import TrainConfig, train_cnn_detailed


class PolynomialRegressor(RegressorMixin, BaseEstimator):
    """Second-order polynomial in six inputs without cross terms (13 coefficients)."""

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self.model_ = fit_pr(X, y)
        coef = self.model_.coefficients
        self.intercept_ = float(coef[0])
        self.coef_ = coef[1:]
        self.condition_number_ = self.model_.condition_number
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != N_INPUTS:
            raise ValueError(f"expected {N_INPUTS} features, got {X.shape[1]}")
        return self.model_.predict(X)


class CausalCNNRegressor(RegressorMixin, BaseEstimator):
    """Causal CNN over one time-ordered sequence; rows of ``X`` are consecutive samples.

    ``fit`` optionally takes a validation sequence for best-epoch selection.
    """

    def __init__(self, learning_rate=1e-3, batch_length=256, batch_size=8, epochs=60, steps_per_epoch=None,
                 beta1=0.9, beta2=0.999, eps=1e-8, channels=16, kernel_size=4, n_blocks=3, random_state=0):
        self.learning_rate = learning_rate
        self.batch_length = batch_length
        self.batch_size = batch_size
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.channels = channels
        self.kernel_size = kernel_size
        self.n_blocks = n_blocks
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, batch_length=self.batch_length, batch_size=self.batch_size,
            epochs=self.epochs, steps_per_epoch=self.steps_per_epoch, beta1=self.beta1, beta2=self.beta2,
            eps=self.eps, seed=int(self.random_state or 0), channels=self.channels,
            kernel_size=self.kernel_size, n_blocks=self.n_blocks)

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        val = None
        if X_val is not None:
            X_val, y_val = check_X_y(X_val, y_val, dtype=np.float64, y_numeric=True)
            val = [(X_val.T, y_val)]
        result = train_cnn_detailed([(X.T, y)], val, self._config())
        self.model_ = result.model
        self.curve_ = result.curve
        self.best_epoch_ = result.best_epoch
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return cnn_forward(self.model_, X.T)


class DTWKMeans(ClusterMixin, BaseEstimator):
    """k-means under DTW; each row of ``X`` (or each sequence in a list) is one window."""

    def __init__(self, n_clusters=6, max_iters=30, n_init=1, dba_iters=5, band=None, random_state=0):
        self.n_clusters = n_clusters
        self.max_iters = max_iters
        self.n_init = n_init
        self.dba_iters = dba_iters
        self.band = band
        self.random_state = random_state

    @staticmethod
    def _windows(X):
        if isinstance(X, np.ndarray) and X.ndim == 2:
            return list(check_array(X, dtype=np.float64))
        return [check_array(np.asarray(w, dtype=np.float64)[None, :])[0] for w in X]

    def fit(self, X, y=None):
        result = dtw_kmeans(self._windows(X), self.n_clusters, seed=int(self.random_state or 0),
                            max_iters=self.max_iters, n_init=self.n_init, dba_iters=self.dba_iters, band=self.band)
        self.clustering_ = result
        self.cluster_centers_ = result.centers
        self.labels_ = result.labels
        self.inertia_ = result.inertia
        return self

    def predict(self, X):
        check_is_fitted(self, "clustering_")
        windows = self._windows(X)
        dist = np.array([[dtw_cost(w, c, self.band) for c in self.cluster_centers_] for w in windows])
        return np.argmin(dist, axis=1)
