"""Downstream classifiers trained on synthesized features.

Both follow the scikit-learn estimator protocol (``fit``/``predict``/
``decision_function``, ``classes_`` after fitting) so they compose with the
usual tooling. Prediction ties are broken toward the lowest class id.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from .autodiff import Rng, Tape, Tensor
from .errors import ParameterError, TrainingDataError
from .nets import init_params, mlp_forward, softmax_head_config
from .validation import as_float_matrix, as_label_vector, check_feature_dim


def _class_index(y: np.ndarray, classes: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(classes, y)
    if np.any(idx >= len(classes)) or np.any(classes[np.minimum(idx, len(classes) - 1)] != y):
        raise TrainingDataError("labels contain a class outside the declared class set")
    return idx


def train_linear_svm(
    features,
    labels,
    c_penalty: float = 1.0,
    epochs: int = 200,
    rng: Optional[Rng] = None,
    classes: Optional[Sequence[int]] = None,
    balanced: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """One-vs-rest soft-margin linear SVM by deterministic batch subgradient
    descent (step 1/(lambda*t)); returns per-class weights [K,f] and biases [K].

    With ``balanced`` the hinge term of each example is weighted by
    n / (K * count(its class)). The ``rng`` argument exists for interface
    symmetry with the softmax head; the solver itself is deterministic.
    """
    del rng
    if c_penalty <= 0:
        raise ParameterError(f"c_penalty must be > 0, got {c_penalty}")
    if epochs < 1:
        raise ParameterError(f"epochs must be >= 1, got {epochs}")
    x = as_float_matrix("features", features)
    n, f = x.shape
    y = as_label_vector("labels", labels, n)
    if classes is None:
        cls = np.unique(y)
    else:
        cls = np.unique(np.asarray(classes, dtype=np.int64))
    k = len(cls)
    if k < 2:
        raise TrainingDataError(f"linear SVM needs >= 2 classes, got {k}")
    if n < k:
        raise TrainingDataError(f"linear SVM needs n >= K, got n={n}, K={k}")
    idx = _class_index(y, cls)
    counts = np.bincount(idx, minlength=k)
    if np.any(counts == 0):
        missing = cls[np.argmax(counts == 0)]
        raise TrainingDataError(f"class {missing} has zero training examples")
    if balanced:
        sample_w = (n / (k * counts[idx].astype(np.float64)))[:, None]
    else:
        sample_w = np.ones((n, 1))

    # Bias rides along as an augmented constant feature, so it shares the
    # regularizer; negligible at these scales and keeps the solver tiny.
    xa = np.concatenate([x.astype(np.float64), np.ones((n, 1))], axis=1)
    signs = -np.ones((n, k))
    signs[np.arange(n), idx] = 1.0
    lam = 1.0 / (c_penalty * n)
    w = np.zeros((k, f + 1))
    for t in range(1, epochs + 1):
        scores = xa @ w.T
        violating = (signs * scores) < 1.0
        grad = lam * w - ((sample_w * (violating * signs)).T @ xa) / n
        w -= (1.0 / (lam * t)) * grad
    return w[:, :f].astype(np.float32), w[:, f].astype(np.float32)


class LinearSVM(BaseEstimator, ClassifierMixin):
    """Max-margin linear classifier over class scores w_k . x + b_k."""

    def __init__(self, c_penalty: float = 1.0, epochs: int = 200, balanced: bool = True):
        self.c_penalty = c_penalty
        self.epochs = epochs
        self.balanced = balanced

    def fit(self, X, y, classes: Optional[Sequence[int]] = None):
        x = as_float_matrix("X", X)
        yv = as_label_vector("y", y, x.shape[0])
        self.classes_ = np.unique(yv) if classes is None else np.unique(
            np.asarray(classes, dtype=np.int64)
        )
        self.weights_, self.bias_ = train_linear_svm(
            x,
            yv,
            c_penalty=self.c_penalty,
            epochs=self.epochs,
            classes=self.classes_,
            balanced=self.balanced,
        )
        return self

    def decision_function(self, X) -> np.ndarray:
        if not hasattr(self, "weights_"):
            raise NotFittedError("LinearSVM is not fitted")
        x = as_float_matrix("X", X)
        check_feature_dim("X", x, self.weights_.shape[1])
        return x @ self.weights_.T + self.bias_

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]


class SoftmaxClassifier(BaseEstimator, ClassifierMixin):
    """Single linear layer with input dropout, trained by minibatch SGD on
    cross-entropy. Hyperparameters are fixed defaults chosen for
    reproducibility rather than tuned per dataset."""

    def __init__(
        self,
        epochs: int = 100,
        lr: float = 1e-3,
        batch_size: int = 64,
        dropout_p: float = 0.5,
        seed: int = 0,
    ):
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.dropout_p = dropout_p
        self.seed = seed

    def fit(self, X, y):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ParameterError("softmax classifier needs epochs >= 0, batch_size >= 1, lr > 0")
        x = as_float_matrix("X", X)
        n, f = x.shape
        yv = as_label_vector("y", y, n)
        self.classes_ = np.unique(yv)
        if len(self.classes_) < 2:
            raise TrainingDataError(
                f"softmax classifier needs >= 2 classes, got {len(self.classes_)}"
            )
        idx = _class_index(yv, self.classes_)
        rng = Rng(self.seed)
        config = softmax_head_config(f, len(self.classes_), self.dropout_p)
        params = init_params(config, rng)
        lr = np.float32(self.lr)
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                rows = order[start : start + self.batch_size]
                params.zero_grads()
                with Tape() as tape:
                    logits = mlp_forward(params, Tensor(x[rows]), True, rng)
                    loss = ad.softmax_cross_entropy(logits, idx[rows])
                tape.backward(loss)
                for t in params.tensors():
                    if t.grad is not None:
                        t.data -= lr * t.grad
        self.weights_ = params.weights[0].data.copy()
        self.bias_ = params.biases[0].data.copy()
        return self

    def decision_function(self, X) -> np.ndarray:
        if not hasattr(self, "weights_"):
            raise NotFittedError("SoftmaxClassifier is not fitted")
        x = as_float_matrix("X", X)
        check_feature_dim("X", x, self.weights_.shape[0])
        return x @ self.weights_ + self.bias_

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def predict_proba(self, X) -> np.ndarray:
        return ad.softmax(self.decision_function(X))
