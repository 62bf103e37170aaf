"""Post-training sample synthesis and ZSL/GZSL evaluation.

The evaluation protocols train a fresh conventional classifier on
generator output and score it on real held-out features, reporting
per-class mean accuracy (mean over classes of each class's top-1 rate,
deliberately insensitive to class-size imbalance).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, Tensor
from .classifiers import LinearSVM, SoftmaxClassifier
from .data import DatasetBundle
from .errors import (
    AttributeRowError,
    ParameterError,
    ProtocolError,
    TrainingDataError,
)
from .nets import NetParams, generator_forward
from .training import ModelState
from .validation import as_float_matrix

CLASSIFIER_KINDS = ("softmax", "svm")

EvalClassifier = Union[SoftmaxClassifier, LinearSVM]


@dataclass(frozen=True)
class SynthesisSpec:
    """How many samples to generate per class and at what noise scale.

    Synthesis always runs with dropout disabled and batch normalization
    computed over the generation batch itself.
    """

    per_class_count: int = 200
    noise_std: float = 0.25
    target_classes: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.per_class_count < 1:
            raise ParameterError(
                f"per_class_count must be >= 1, got {self.per_class_count}"
            )
        if self.noise_std <= 0:
            raise ParameterError(f"noise_std must be > 0, got {self.noise_std}")


def synthesize(
    g_params: NetParams,
    attributes: np.ndarray,
    spec: SynthesisSpec,
    rng: Rng,
) -> tuple[np.ndarray, np.ndarray]:
    """Generate ``per_class_count`` labeled feature rows per target class.

    All classes are generated in one batch so that batch normalization sees
    a class mix comparable to training. Deterministic given the rng state.
    """
    if spec.target_classes is None or len(spec.target_classes) == 0:
        raise ParameterError("synthesis spec must name at least one target class")
    attributes = as_float_matrix("attributes", attributes)
    n_rows = attributes.shape[0]
    for c in spec.target_classes:
        if c < 0 or c >= n_rows:
            raise AttributeRowError(
                f"class {c} has no attribute row (matrix has {n_rows})"
            )
    labels = np.repeat(
        np.asarray(spec.target_classes, dtype=np.int64), spec.per_class_count
    )
    a = attributes[labels]
    noise_dim = g_params.config.input_dim - attributes.shape[1]
    z = ad.gaussian_sample(rng, len(labels), noise_dim, spec.noise_std)
    with ad.no_grad():
        feats = generator_forward(g_params, z, Tensor(a), training=False, rng=rng)
    return feats.data.copy(), labels


def fit_eval_classifier(
    synth: tuple[np.ndarray, np.ndarray], kind: str, rng: Rng
) -> EvalClassifier:
    """Train the chosen classifier kind on a labeled feature set; both kinds
    accept the same input and emit predictions over the same label space."""
    features, labels = synth
    if kind not in CLASSIFIER_KINDS:
        raise ParameterError(f"classifier kind must be one of {CLASSIFIER_KINDS}, got {kind!r}")
    if len(np.unique(labels)) < 2:
        raise TrainingDataError("evaluation classifier needs >= 2 classes")
    if kind == "softmax":
        clf = SoftmaxClassifier(seed=int(rng.integers(0, 2**63)))
    else:
        clf = LinearSVM()
    return clf.fit(features, labels)


def predict(classifier: EvalClassifier, features) -> np.ndarray:
    """Argmax class ids; exact ties resolve to the lowest class id."""
    return classifier.predict(features)


def harmonic_mean(u: float, s: float) -> float:
    """2us/(u+s), the standard seen/unseen compromise; 0 when both are 0."""
    if u < 0 or s < 0:
        raise ParameterError(f"harmonic_mean needs non-negative inputs, got ({u}, {s})")
    total = u + s
    if total == 0:
        return 0.0
    return 2.0 * u * s / total


@dataclass(frozen=True)
class EvalReport:
    """Per-class accuracies plus the protocol's aggregate numbers.

    ``seen_mean`` and ``harmonic`` are populated for gzsl only; accuracies
    are fractions in [0, 1].
    """

    protocol: str
    classifier_kind: str
    per_class_accuracy: dict[int, float]
    unseen_mean: float
    seen_mean: Optional[float] = None
    harmonic: Optional[float] = None

    def to_json_dict(self) -> dict:
        rounded = lambda v: None if v is None else round(float(v), 6)
        return {
            "protocol": self.protocol,
            "classifier": self.classifier_kind,
            "U": rounded(self.unseen_mean),
            "S": rounded(self.seen_mean),
            "H": rounded(self.harmonic),
            "per_class": {
                str(c): rounded(acc) for c, acc in sorted(self.per_class_accuracy.items())
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=False)


def per_class_accuracies(
    y_true: np.ndarray, y_pred: np.ndarray, classes: Sequence[int]
) -> dict[int, float]:
    """Top-1 rate for each class that has at least one test sample."""
    out: dict[int, float] = {}
    for c in classes:
        mask = y_true == c
        if mask.any():
            out[int(c)] = float(np.mean(y_pred[mask] == c))
    return out


def _mean_accuracy(per_class: dict[int, float]) -> float:
    return float(np.mean(list(per_class.values())))


def eval_zsl(
    state: ModelState,
    dataset: DatasetBundle,
    spec: SynthesisSpec,
    kind: str,
    rng: Rng,
) -> EvalReport:
    """Synthesize the unseen classes, fit a classifier over them alone, and
    score real unseen-class test features. The classifier can never emit a
    seen-class id."""
    if dataset.unseen_test_indices.size == 0:
        raise ProtocolError("zsl evaluation needs unseen test samples")
    targets = tuple(sorted(int(c) for c in dataset.unseen_classes))
    synth = synthesize(
        state.g_params, dataset.attributes, replace(spec, target_classes=targets), rng
    )
    clf = fit_eval_classifier(synth, kind, rng)
    x_test = dataset.features[dataset.unseen_test_indices]
    y_test = dataset.labels[dataset.unseen_test_indices].astype(np.int64)
    preds = predict(clf, x_test)
    per_class = per_class_accuracies(y_test, preds, targets)
    return EvalReport(
        protocol="zsl",
        classifier_kind=kind,
        per_class_accuracy=per_class,
        unseen_mean=_mean_accuracy(per_class),
    )


def eval_gzsl(
    state: ModelState,
    dataset: DatasetBundle,
    spec: SynthesisSpec,
    kind: str,
    rng: Rng,
    use_real_seen: bool = False,
) -> EvalReport:
    """Fit one classifier over all seen+unseen classes and score both real
    test partitions.

    Seen-class training rows are generated too by default (uniform sample
    quality across the label space); ``use_real_seen`` switches them to the
    dataset's real train rows for ablation.
    """
    if dataset.seen_test_indices.size == 0:
        raise ProtocolError("gzsl evaluation needs seen test samples")
    if dataset.unseen_test_indices.size == 0:
        raise ProtocolError("gzsl evaluation needs unseen test samples")
    seen = tuple(sorted(int(c) for c in dataset.seen_classes))
    unseen = tuple(sorted(int(c) for c in dataset.unseen_classes))
    if use_real_seen:
        synth_targets = unseen
    else:
        synth_targets = tuple(sorted(seen + unseen))
    x_synth, y_synth = synthesize(
        state.g_params,
        dataset.attributes,
        replace(spec, target_classes=synth_targets),
        rng,
    )
    if use_real_seen:
        x_real = dataset.features[dataset.train_indices]
        y_real = dataset.labels[dataset.train_indices].astype(np.int64)
        x_synth = np.concatenate([x_synth, x_real])
        y_synth = np.concatenate([y_synth, y_real])
    clf = fit_eval_classifier((x_synth, y_synth), kind, rng)

    x_seen = dataset.features[dataset.seen_test_indices]
    y_seen = dataset.labels[dataset.seen_test_indices].astype(np.int64)
    x_unseen = dataset.features[dataset.unseen_test_indices]
    y_unseen = dataset.labels[dataset.unseen_test_indices].astype(np.int64)
    seen_acc = per_class_accuracies(y_seen, predict(clf, x_seen), seen)
    unseen_acc = per_class_accuracies(y_unseen, predict(clf, x_unseen), unseen)
    u = _mean_accuracy(unseen_acc)
    s = _mean_accuracy(seen_acc)
    return EvalReport(
        protocol="gzsl",
        classifier_kind=kind,
        per_class_accuracy={**seen_acc, **unseen_acc},
        unseen_mean=u,
        seen_mean=s,
        harmonic=harmonic_mean(u, s),
    )
