"""Scikit-learn style facade over the full train/synthesize/evaluate pipeline.

``ZeroShotMetaLearner.fit`` meta-trains the conditional generator on a
dataset bundle's seen classes; ``predict`` then classifies feature rows
into the unseen classes via a classifier fitted on synthesized samples,
and ``evaluate`` produces the standard reports.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .autodiff import Rng
from .data import DatasetBundle
from .downstream import (
    EvalReport,
    SynthesisSpec,
    eval_gzsl,
    eval_zsl,
    fit_eval_classifier,
    synthesize,
)
from .episodes import EpisodeSpec
from .errors import ParameterError
from .training import HyperParams, ModelSpec, train_loop
from .validation import as_float_matrix, check_feature_dim


class ZeroShotMetaLearner(BaseEstimator):
    """End-to-end zero-shot learner with an estimator-shaped surface.

    Parameters mirror the underlying episode spec, trainer hyperparameters,
    network widths and synthesis settings; see those classes for semantics.
    The default widths are the desk-scale ones, not the full-size presets.
    """

    def __init__(
        self,
        n_way_train: int = 5,
        k_shot_train: int = 5,
        n_way_val: int = 5,
        k_shot_val: int = 3,
        episode_mode: str = "zsml",
        tasks_per_batch: int = 10,
        iterations: int = 2000,
        inner_lr_d: float = 1e-3,
        inner_lr_gc: float = 1e-3,
        meta_lr_d: float = 1e-3,
        meta_lr_gc: float = 1e-3,
        inner_steps: int = 1,
        n_critic: int = 1,
        clip_c: float = 0.01,
        train_noise_std: float = 0.5,
        shared_inner: bool = False,
        g_hidden: tuple[int, ...] = (64, 64),
        d_hidden: tuple[int, ...] = (64, 64, 32),
        c_hidden: tuple[int, ...] = (64, 64),
        noise_dim: Optional[int] = None,
        dropout_p: float = 0.5,
        synth_per_class: int = 200,
        synth_noise_std: float = 0.25,
        classifier: str = "softmax",
        seed: int = 0,
    ):
        self.n_way_train = n_way_train
        self.k_shot_train = k_shot_train
        self.n_way_val = n_way_val
        self.k_shot_val = k_shot_val
        self.episode_mode = episode_mode
        self.tasks_per_batch = tasks_per_batch
        self.iterations = iterations
        self.inner_lr_d = inner_lr_d
        self.inner_lr_gc = inner_lr_gc
        self.meta_lr_d = meta_lr_d
        self.meta_lr_gc = meta_lr_gc
        self.inner_steps = inner_steps
        self.n_critic = n_critic
        self.clip_c = clip_c
        self.train_noise_std = train_noise_std
        self.shared_inner = shared_inner
        self.g_hidden = g_hidden
        self.d_hidden = d_hidden
        self.c_hidden = c_hidden
        self.noise_dim = noise_dim
        self.dropout_p = dropout_p
        self.synth_per_class = synth_per_class
        self.synth_noise_std = synth_noise_std
        self.classifier = classifier
        self.seed = seed

    # -- assembly ----------------------------------------------------------

    def episode_spec(self) -> EpisodeSpec:
        return EpisodeSpec(
            n_way_train=self.n_way_train,
            k_shot_train=self.k_shot_train,
            n_way_val=self.n_way_val,
            k_shot_val=self.k_shot_val,
            mode=self.episode_mode,
            tasks_per_batch=self.tasks_per_batch,
        )

    def hyper_params(self) -> HyperParams:
        return HyperParams(
            inner_lr_d=self.inner_lr_d,
            inner_lr_gc=self.inner_lr_gc,
            meta_lr_d=self.meta_lr_d,
            meta_lr_gc=self.meta_lr_gc,
            inner_steps=self.inner_steps,
            n_critic=self.n_critic,
            clip_c=self.clip_c,
            iterations=self.iterations,
            train_noise_std=self.train_noise_std,
            shared_inner=self.shared_inner,
        )

    def model_spec(self, bundle: DatasetBundle) -> ModelSpec:
        return ModelSpec.for_dataset(
            feat_dim=bundle.feat_dim,
            attr_dim=bundle.attr_dim,
            n_classes=bundle.n_classes,
            noise_dim=self.noise_dim,
            g_hidden=tuple(self.g_hidden),
            d_hidden=tuple(self.d_hidden),
            c_hidden=tuple(self.c_hidden),
            dropout_p=self.dropout_p,
        )

    def synthesis_spec(self) -> SynthesisSpec:
        return SynthesisSpec(
            per_class_count=self.synth_per_class, noise_std=self.synth_noise_std
        )

    # -- estimator protocol --------------------------------------------------

    def fit(self, bundle: DatasetBundle, y=None, metric_sink=None):
        """Meta-train on the bundle's seen classes; returns self."""
        if y is not None:
            raise ParameterError("labels travel inside the DatasetBundle; y must be None")
        bundle.validate()
        self.bundle_ = bundle
        self.state_ = train_loop(
            dataset=bundle,
            episode_spec=self.episode_spec(),
            hp=self.hyper_params(),
            model_spec=self.model_spec(bundle),
            rng=Rng(self.seed),
            metric_sink=metric_sink,
        )
        self.classes_ = np.sort(bundle.unseen_classes).astype(np.int64)
        self._zsl_classifier = None
        return self

    def _check_fitted(self):
        if not hasattr(self, "state_"):
            raise NotFittedError("ZeroShotMetaLearner is not fitted")

    def synthesize(self, class_ids=None) -> tuple[np.ndarray, np.ndarray]:
        """Labeled synthetic features for the given classes (default: unseen)."""
        self._check_fitted()
        targets = self.classes_ if class_ids is None else np.asarray(class_ids)
        spec = SynthesisSpec(
            per_class_count=self.synth_per_class,
            noise_std=self.synth_noise_std,
            target_classes=tuple(int(c) for c in targets),
        )
        return synthesize(
            self.state_.g_params,
            self.bundle_.attributes,
            spec,
            Rng(self.seed).spawn(),
        )

    def predict(self, X) -> np.ndarray:
        """Zero-shot prediction: unseen-class ids for real feature rows."""
        self._check_fitted()
        x = as_float_matrix("X", X)
        check_feature_dim("X", x, self.bundle_.feat_dim)
        if self._zsl_classifier is None:
            rng = Rng(self.seed).spawn()
            self._zsl_classifier = fit_eval_classifier(
                self.synthesize(), self.classifier, rng
            )
        return self._zsl_classifier.predict(x)

    def score(self, X, y) -> float:
        """Per-class mean accuracy over the unseen label space."""
        from .downstream import per_class_accuracies

        preds = self.predict(X)
        y = np.asarray(y, dtype=np.int64)
        per_class = per_class_accuracies(y, preds, [int(c) for c in self.classes_])
        return float(np.mean(list(per_class.values())))

    def evaluate(self, protocol: str = "zsl", use_real_seen: bool = False) -> EvalReport:
        """Full evaluation report on the fitted bundle's test partitions."""
        self._check_fitted()
        rng = Rng(self.seed).spawn()
        if protocol == "zsl":
            return eval_zsl(
                self.state_, self.bundle_, self.synthesis_spec(), self.classifier, rng
            )
        if protocol == "gzsl":
            return eval_gzsl(
                self.state_,
                self.bundle_,
                self.synthesis_spec(),
                self.classifier,
                rng,
                use_real_seen=use_real_seen,
            )
        raise ParameterError(f"protocol must be 'zsl' or 'gzsl', got {protocol!r}")
