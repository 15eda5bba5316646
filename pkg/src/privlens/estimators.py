"""scikit-learn style wrappers around the trainer.

``X`` is always an array of ``(T, H, W, 3)`` clips. The lens itself is a
transformer: ``fit`` runs pretraining and the adversarial game, ``transform``
captures clips through the learned lens.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .metrics import accuracy, c_map, per_attribute_ap
from .synthdata import Dataset, Split
from .trainer import TrainConfig, Trainer


def _videos(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 5 or X.shape[-1] != 3:
        raise ValueError(f"expected (N, T, H, W, 3) clips, got shape {X.shape}")
    return X


def _trainer(X, actions, attributes, config) -> Trainer:
    n = len(X)
    actions = np.zeros(n, int) if actions is None else np.asarray(actions, dtype=int)
    attributes = np.zeros((n, 5), int) if attributes is None else np.asarray(attributes, dtype=int)
    split = Split(X, actions, attributes, np.arange(n))
    return Trainer(config, Dataset(split, split))


class ActionRecognizer(BaseEstimator, ClassifierMixin):
    """Clean-video action classifier (pretraining recipe only)."""

    def __init__(self, epochs=40, width=16, seed=0):
        self.epochs = epochs
        self.width = width
        self.seed = seed

    def fit(self, X, y):
        X = _videos(X)
        cfg = TrainConfig(classifier_epochs=self.epochs, classifier_width=self.width, seed=self.seed)
        self.network_ = _trainer(X, y, None, cfg).pretrain_classifier()
        self.classes_ = np.arange(self.network_.n_actions)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        return self.network_.predict_proba(_videos(X))

    def predict(self, X):
        check_is_fitted(self, "network_")
        return self.network_.predict(_videos(X))


class AttributeEstimator(BaseEstimator, ClassifierMixin):
    """Multi-label attribute adversary; ``score`` is the C-MAP."""

    def __init__(self, epochs=20, width=12, seed=0):
        self.epochs = epochs
        self.width = width
        self.seed = seed

    def fit(self, X, Y):
        X = _videos(X)
        cfg = TrainConfig(adversary_epochs=self.epochs, adversary_width=self.width, seed=self.seed)
        self.network_ = _trainer(X, None, Y, cfg).pretrain_adversary()
        return self

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        return self.network_.decision_function(_videos(X))

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(int)

    def score(self, X, Y, sample_weight=None):
        return c_map(per_attribute_ap(self.decision_function(X), np.asarray(Y)))


class PrivacyLens(BaseEstimator, TransformerMixin):
    """Learn a phase mask by the adversarial game; ``transform`` captures clips.

    ``fit(X, y, attributes=...)`` takes actions as ``y`` and the binary
    attribute matrix as a fit parameter. Keyword arguments go to
    :class:`~privlens.trainer.TrainConfig`.
    """

    def __init__(self, config: TrainConfig | None = None):
        self.config = config

    def fit(self, X, y, attributes=None):
        if attributes is None:
            raise ValueError("PrivacyLens.fit needs the attribute labels")
        X = _videos(X)
        cfg = self.config or TrainConfig()
        trainer = _trainer(X, y, attributes, replace(cfg))
        state = trainer.train()
        self.alpha_ = state.alpha.copy()
        self.classifier_ = state.classifier
        self.telemetry_ = list(state.telemetry)
        self.upper_bounds_ = dict(state.upper_bounds)
        self.camera_ = trainer.camera(self.alpha_)
        return self

    def transform(self, X):
        check_is_fitted(self, "alpha_")
        return self.camera_.capture(_videos(X), (8,)).astype(np.float32)

    def score(self, X, y):
        """Action accuracy of the jointly trained classifier on private clips."""
        return accuracy(self.classifier_.predict(self.transform(X)), np.asarray(y))
