"""scikit-learn compatible wrappers around the training schemes.

``X`` is either ``(rows, N, K)`` or flattened ``(rows, N * K)``; the flat
form needs ``n_sensors`` so it can be reshaped. Labels are 1 for Alice and
0 for Eve.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.model_selection import train_test_split
from sklearn.utils.validation import check_is_fitted

from .evaluation import compute_rates, optimize_threshold
from .exceptions import ConfigurationError, InputShapeError, MissingClassError
from .nn import TrainConfig
from .schemes import GLOBAL, LD, SCHEMES, parse_global_config, train_global, train_local_scheme


def check_sensor_features(X, n_sensors=None, n_features=None) -> np.ndarray:
    """Return ``X`` as a finite float array of shape (rows, N, K)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        if n_sensors is None:
            raise InputShapeError("2-D input needs n_sensors to be reshaped to (rows, N, K)")
        if X.shape[1] % n_sensors:
            raise InputShapeError(f"{X.shape[1]} columns do not split over {n_sensors} sensors")
        X = X.reshape(len(X), n_sensors, -1)
    if X.ndim != 3:
        raise InputShapeError(f"expected (rows, N, K) or (rows, N*K) features, got shape {X.shape}")
    if len(X) == 0:
        raise InputShapeError("no rows")
    if n_sensors is not None and X.shape[1] != n_sensors:
        raise InputShapeError(f"expected {n_sensors} sensors, got {X.shape[1]}")
    if n_features is not None and X.shape[2] != n_features:
        raise InputShapeError(f"expected {n_features} features, got {X.shape[2]}")
    if not np.all(np.isfinite(X)):
        raise InputShapeError("features must be finite")
    return X


def check_labels(y, rows) -> np.ndarray:
    """Binary labels with both classes present."""
    y = np.asarray(y)
    if y.shape != (rows,):
        raise InputShapeError(f"expected {rows} labels, got shape {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise InputShapeError("labels must be 0 (Eve) or 1 (Alice)")
    y = y.astype(int)
    if y.min() == y.max():
        raise MissingClassError("both Alice (1) and Eve (0) rows are needed")
    return y


class CooperativeAuthenticator(ClassifierMixin, BaseEstimator):
    """One trained scheme plus its validation-optimal threshold.

    ``scheme`` is AE, LD, CLDAE or GLOBAL; GLOBAL takes its shape from
    ``notation`` (``"4-3-||-6-3-3-1"`` style) and ignores ``M``, as does LD. When no
    ``eval_set`` is passed to :meth:`fit`, ``validation_fraction`` of the
    training rows are held out (stratified) for early stopping and threshold
    selection.
    """

    def __init__(self, scheme="CLDAE", M=2, notation=None, n_sensors=None, learning_rate=1e-3, epochs=500,
                 batch_size=128, early_stop_patience=25, restarts=3, standardize=True, freeze_decision=True,
                 reconstruction_units="raw", validation_fraction=0.2, random_state=0):
        self.scheme = scheme
        self.M = M
        self.notation = notation
        self.n_sensors = n_sensors
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.early_stop_patience = early_stop_patience
        self.restarts = restarts
        self.standardize = standardize
        self.freeze_decision = freeze_decision
        self.reconstruction_units = reconstruction_units
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs, batch_size=self.batch_size,
                           early_stop_patience=self.early_stop_patience, restarts=self.restarts,
                           seed=int(self.random_state))

    def _check_params(self, N):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not 0 < self.validation_fraction < 1:
            raise ConfigurationError("validation_fraction must lie in (0, 1)")
        if self.scheme == GLOBAL:
            if not self.notation:
                raise ConfigurationError("GLOBAL needs a notation such as '4-3-||-6-3-3-1'")
            return parse_global_config(self.notation, N)
        if int(self.M) != self.M or self.M < 1:
            raise ConfigurationError("M must be a positive integer")
        return None

    def fit(self, X, y, eval_set=None):
        X = check_sensor_features(X, self.n_sensors)
        y = check_labels(y, len(X))
        gc = self._check_params(X.shape[1])
        if eval_set is None:
            X, Xv, y, yv = train_test_split(X, y, test_size=self.validation_fraction, stratify=y,
                                            random_state=int(self.random_state))
        else:
            Xv = check_sensor_features(eval_set[0], X.shape[1], X.shape[2])
            yv = check_labels(eval_set[1], len(Xv))
        cfg = self._train_config()
        if gc is not None:
            bundle = train_global(gc, (X, y), (Xv, yv), cfg, standardize=self.standardize)
        else:
            M = 1 if self.scheme == LD else int(self.M)
            bundle = train_local_scheme(self.scheme, M, (X, y), (Xv, yv), cfg,
                                        freeze_decision=self.freeze_decision, standardize=self.standardize,
                                        reconstruction_units=self.reconstruction_units)
        bundle.threshold, self.validation_error_ = optimize_threshold(bundle.scores(Xv), yv)
        self.bundle_ = bundle
        self.threshold_ = bundle.threshold
        self.classes_ = np.array([0, 1])
        self.n_sensors_, self.n_features_ = X.shape[1], X.shape[2]
        self.n_features_in_ = self.n_sensors_ * self.n_features_
        return self

    def _X(self, X):
        check_is_fitted(self, "bundle_")
        return check_sensor_features(X, self.n_sensors_, self.n_features_)

    def decision_function(self, X):
        """Fused score ``z``; a row is accepted as Alice when ``z >= threshold_``."""
        X = self._X(X)
        return self.bundle_.scores(X)

    def predict(self, X):
        return (self.decision_function(X) >= self.threshold_).astype(int)

    def predict_proba(self, X):
        z = self.decision_function(X)
        return np.column_stack([1.0 - z, z])

    def error_rate(self, X, y):
        """``(p_fa, p_md, epsilon)`` at the fitted threshold."""
        X = self._X(X)
        return compute_rates(self.bundle_.scores(X), check_labels(y, len(X)), threshold=self.threshold_)

    def score(self, X, y, sample_weight=None):
        """``1 - epsilon``, so larger is better as scikit-learn expects."""
        return 1.0 - self.error_rate(X, y)[2]


class SensorEncoder(TransformerMixin, BaseEstimator):
    """The sensor-side half of a scheme: features in, reported codes out.

    ``transform`` returns the ``(rows, N * M)`` vectors each sensor sends to
    the sink. Training uses the same procedure as
    :class:`CooperativeAuthenticator` (the fusion network is fitted too,
    since CLDAE and LD encoders are trained through it).
    """

    def __init__(self, scheme="CLDAE", M=2, notation=None, n_sensors=None, learning_rate=1e-3, epochs=500,
                 batch_size=128, early_stop_patience=25, restarts=3, standardize=True, freeze_decision=True,
                 reconstruction_units="raw", validation_fraction=0.2, random_state=0):
        self.scheme = scheme
        self.M = M
        self.notation = notation
        self.n_sensors = n_sensors
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.early_stop_patience = early_stop_patience
        self.restarts = restarts
        self.standardize = standardize
        self.freeze_decision = freeze_decision
        self.reconstruction_units = reconstruction_units
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def fit(self, X, y, eval_set=None):
        self.authenticator_ = CooperativeAuthenticator(**self.get_params()).fit(X, y, eval_set=eval_set)
        self.n_features_in_ = self.authenticator_.n_features_in_
        return self

    def transform(self, X):
        check_is_fitted(self, "authenticator_")
        auth = self.authenticator_
        return auth.bundle_.local_codes(auth._X(X))
