"""Per-pixel multinomial logistic regression trained with mini-batch SGD."""

from __future__ import annotations

from typing import Iterable

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .core import IGNORE, Rng, Sample, derive_rng

_SHUFFLE_SALT = 0x5348_5546  # "SHUF"


def softmax_loss_grad(weights: np.ndarray, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient.

    ``weights`` is ``(C, bands + 1)`` with the bias in the last column,
    ``X`` is ``(n, bands)`` and ``y`` holds integer labels.
    """
    Xb = np.hstack([X, np.ones((len(X), 1))])
    z = Xb @ weights.T
    z -= z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(y)
    loss = -logp[np.arange(n), y].mean()
    p = np.exp(logp)
    p[np.arange(n), y] -= 1.0
    return float(loss), p.T @ Xb / n


def sample_pixels(sample: Sample) -> tuple[np.ndarray, np.ndarray]:
    """Non-IGNORE pixels of a sample as ``(features, labels)``."""
    img = sample.image.samples
    X = img.reshape(img.shape[0], -1).T
    y = sample.mask.values.ravel()
    keep = y != IGNORE
    return X[keep], y[keep].astype(np.int64)


class SoftmaxPixelClassifier(ClassifierMixin, BaseEstimator):
    """Linear softmax classifier over per-pixel band values.

    Parameters
    ----------
    n_classes : int or None, default=None
        Number of classes; inferred as ``max(y) + 1`` when None.
    epochs : int, default=10
    learning_rate : float, default=0.5
    batch_pixels : int, default=1024
        Mini-batch size in pixels.
    seed : int, default=0
        Seeds the per-epoch pixel shuffles.

    Attributes
    ----------
    weights_ : ndarray of shape (n_classes, n_features + 1)
        Class scores are ``X @ weights_[:, :-1].T + weights_[:, -1]``.
    loss_curve_ : list of float
        Mean mini-batch loss per epoch.
    """

    def __init__(self, n_classes=None, epochs=10, learning_rate=0.5, batch_pixels=1024, seed=0):
        self.n_classes = n_classes
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_pixels = batch_pixels
        self.seed = seed

    def _init(self, n_features: int, n_classes: int) -> None:
        self.weights_ = np.zeros((n_classes, n_features + 1))
        self.classes_ = np.arange(n_classes)
        self.n_features_in_ = n_features
        self.loss_curve_ = []

    def _epoch(self, X: np.ndarray, y: np.ndarray, epoch: int) -> float:
        rng = Rng(derive_rng(self.seed ^ _SHUFFLE_SALT, epoch, 0))
        order = np.argsort(rng.u64_array(len(y)), kind="stable")
        losses = []
        for start in range(0, len(y), self.batch_pixels):
            idx = order[start : start + self.batch_pixels]
            loss, grad = softmax_loss_grad(self.weights_, X[idx], y[idx])
            self.weights_ -= self.learning_rate * grad
            losses.append(loss)
        mean = float(np.mean(losses)) if losses else float("nan")
        self.loss_curve_.append(mean)
        return mean

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(np.int64)
        self._init(X.shape[1], self.n_classes or int(y.max()) + 1)
        if y.max() >= len(self.classes_) or y.min() < 0:
            raise ValueError("labels outside [0, n_classes)")
        for epoch in range(self.epochs):
            self._epoch(X, y, epoch)
        return self

    def fit_samples(self, epoch_samples: Iterable[list[Sample]], n_features: int, n_classes: int):
        """Train on one freshly produced sample list per epoch.

        ``epoch_samples`` yields the (possibly augmented) training samples of
        each epoch in turn; every epoch's pixels are shuffled and consumed in
        mini-batches.
        """
        self._init(n_features, n_classes)
        for epoch, samples in enumerate(epoch_samples):
            parts = [sample_pixels(s) for s in samples]
            X = np.concatenate([p[0] for p in parts])
            y = np.concatenate([p[1] for p in parts])
            if len(y) == 0:
                raise ValueError("no labelled pixels to train on")
            self._epoch(X, y, epoch)
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "weights_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"model expects {self.n_features_in_} bands, got {X.shape[1]}")
        return X @ self.weights_[:, :-1].T + self.weights_[:, -1]

    def predict_proba(self, X) -> np.ndarray:
        z = self.decision_function(X)
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=1)

    def predict_mask(self, sample: Sample) -> np.ndarray:
        """Per-pixel argmax prediction shaped like the sample's mask."""
        img = sample.image.samples
        pred = self.predict(img.reshape(img.shape[0], -1).T)
        return pred.reshape(img.shape[1:]).astype(np.uint8)
