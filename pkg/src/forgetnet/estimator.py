"""Scikit-learn style interface to the adversarial forgetting model."""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y, column_or_1d

from .data import Dataset, DatasetManifest
from .nets import ObjectiveWeights
from .train import TrainConfig, train


class AdversarialForgettingClassifier(TransformerMixin, ClassifierMixin,
                                      BaseEstimator):
    """Classifier whose latent code is trained to forget a factor ``s``.

    ``fit(X, y, s=...)`` trains an encoder, a forget-gate mask, a target
    predictor, a decoder, and an adversarial discriminator on ``s``;
    ``transform`` returns the masked latent code and ``predict`` the
    target labels read from it. With ``s=None`` the discriminator sees a
    single constant class and the model degenerates to a plain
    classifier over the gated code, which is the natural no-adversary
    baseline.

    Single-task only; the functional interface handles multi-task data.
    """

    def __init__(self, rho=1.0, delta=1.0, lam=1.0, k=10, latent_dim=8,
                 hidden=64, encoder_layers=2, predictor_layers=1,
                 decoder_layers=2, discriminator_layers=2,
                 learning_rate=1e-4, decay=1e-4, epochs=100, batch_size=64,
                 val_fraction=0.1, patience=10, s_kind="nuisance",
                 random_state=0):
        self.rho = rho
        self.delta = delta
        self.lam = lam
        self.k = k
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.encoder_layers = encoder_layers
        self.predictor_layers = predictor_layers
        self.decoder_layers = decoder_layers
        self.discriminator_layers = discriminator_layers
        self.learning_rate = learning_rate
        self.decay = decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.patience = patience
        self.s_kind = s_kind
        self.random_state = random_state

    def _config(self):
        return TrainConfig(
            weights=ObjectiveWeights(rho=self.rho, delta=self.delta,
                                     lam=self.lam),
            k=self.k, learning_rate=self.learning_rate, decay=self.decay,
            epochs=self.epochs, batch_size=self.batch_size,
            seed=self.random_state, dataset="arrays",
            latent_dim=self.latent_dim, hidden=self.hidden,
            encoder_layers=self.encoder_layers,
            predictor_layers=self.predictor_layers,
            decoder_layers=self.decoder_layers,
            discriminator_layers=self.discriminator_layers,
            val_fraction=self.val_fraction, patience=self.patience)

    def fit(self, X, y, s=None):
        X, y = check_X_y(X, y)
        if s is None:
            s_idx = np.zeros(X.shape[0], dtype=np.int64)
            self.s_classes_ = np.array([0])
        else:
            s = column_or_1d(s)
            if s.shape[0] != X.shape[0]:
                raise ValueError("s must have one entry per sample")
            self.s_classes_, s_idx = np.unique(s, return_inverse=True)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need at least two target classes")

        manifest = DatasetManifest(
            name="arrays", feature_width=X.shape[1],
            y_cardinality=[int(self.classes_.size)],
            s_cardinality=[int(self.s_classes_.size)], s_kind=[self.s_kind])
        data = Dataset(X, [y_idx], [s_idx.astype(np.int64)], manifest)
        result = train(self._config(), data)
        if result.diverged:
            warnings.warn("training diverged; model rolled back to the last "
                          "healthy epoch", ConvergenceWarning)
        self.model_ = result.model
        self.train_result_ = result
        self.n_features_in_ = X.shape[1]
        _, masks, _ = self.model_.encode(X)
        self.mask_means_ = masks[0].mean(axis=0)
        return self

    def _validated(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected "
                             f"{self.n_features_in_}")
        return X

    def transform(self, X):
        """Masked latent codes z * m, shape (n, latent_dim)."""
        X = self._validated(X)
        _, _, z_tildes = self.model_.encode(X)
        return z_tildes[0]

    def predict_proba(self, X):
        X = self._validated(X)
        logits = self.model_.predict_logits(X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        expd = np.exp(shifted)
        return expd / expd.sum(axis=1, keepdims=True)

    def predict(self, X):
        X = self._validated(X)
        logits = self.model_.predict_logits(X)
        return self.classes_[np.argmax(logits, axis=1)]
