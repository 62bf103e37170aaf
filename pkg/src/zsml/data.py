"""Dataset bundles, the ZSB1 binary format, few-shot subsampling, and the
synthetic attribute-conditioned benchmark used for desk-scale verification.

A bundle holds real-valued feature rows, integer class labels, one attribute
row per class, a seen/unseen class split, and disjoint train / seen-test /
unseen-test index lists. Class ids index rows of the attribute matrix.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .autodiff import Rng
from .errors import FormatError, IntegrityError, ParameterError

ZSB_MAGIC = b"ZSB1"
ZSB_VERSION = 1


@dataclass(frozen=True)
class DatasetBundle:
    features: np.ndarray  # n x f float32
    labels: np.ndarray  # n uint32 class ids
    attributes: np.ndarray  # C x d float32, one row per class id
    seen_classes: np.ndarray  # uint32
    unseen_classes: np.ndarray  # uint32
    train_indices: np.ndarray  # uint32 indices into features
    seen_test_indices: np.ndarray
    unseen_test_indices: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.features.shape[1]

    @property
    def attr_dim(self) -> int:
        return self.attributes.shape[1]

    @property
    def n_classes(self) -> int:
        return self.attributes.shape[0]

    @cached_property
    def train_indices_by_class(self) -> dict[int, np.ndarray]:
        """Sorted train indices grouped by label; the sampler's substrate."""
        labels = self.labels[self.train_indices]
        out: dict[int, np.ndarray] = {}
        for c in self.seen_classes:
            out[int(c)] = np.sort(self.train_indices[labels == c])
        return out

    def validate(self) -> None:
        """Raise IntegrityError naming the first violated invariant."""
        n, _ = self.features.shape
        seen = set(int(c) for c in self.seen_classes)
        unseen = set(int(c) for c in self.unseen_classes)
        if seen & unseen:
            raise IntegrityError("seen and unseen class lists overlap")
        present = set(int(c) for c in np.unique(self.labels))
        if not present <= (seen | unseen):
            raise IntegrityError("a label is in neither the seen nor unseen class list")
        referenced = seen | unseen | present
        if referenced and max(referenced) >= self.n_classes:
            raise IntegrityError(
                "a referenced class id has no attribute row "
                f"(id {max(referenced)} >= {self.n_classes} rows)"
            )
        if self.labels.shape != (n,):
            raise IntegrityError("labels length does not match feature rows")
        for name, idx in (
            ("train", self.train_indices),
            ("seen_test", self.seen_test_indices),
            ("unseen_test", self.unseen_test_indices),
        ):
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise IntegrityError(f"{name} index out of range")
        if not set(self.labels[self.train_indices].tolist()) <= seen:
            raise IntegrityError("a train index points at a non-seen-class sample")
        if not set(self.labels[self.seen_test_indices].tolist()) <= seen:
            raise IntegrityError("a seen_test index points at a non-seen-class sample")
        if not set(self.labels[self.unseen_test_indices].tolist()) <= unseen:
            raise IntegrityError("an unseen_test index points at a non-unseen-class sample")
        all_idx = np.concatenate(
            [self.train_indices, self.seen_test_indices, self.unseen_test_indices]
        )
        if np.unique(all_idx).size != all_idx.size:
            raise IntegrityError("index lists are not pairwise disjoint")

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for arr in (
            self.features,
            self.labels,
            self.attributes,
            self.seen_classes,
            self.unseen_classes,
            self.train_indices,
            self.seen_test_indices,
            self.unseen_test_indices,
        ):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def save_zsb(bundle: DatasetBundle, path: str | Path) -> None:
    """Serialize a validated bundle; the round trip is bit-exact."""
    bundle.validate()
    n, f = bundle.features.shape
    c, d = bundle.attributes.shape
    chunks = [
        ZSB_MAGIC,
        struct.pack("<I", ZSB_VERSION),
        struct.pack("<Q", n),
        struct.pack("<I", f),
        struct.pack("<I", c),
        struct.pack("<I", d),
        np.ascontiguousarray(bundle.attributes, dtype="<f4").tobytes(),
        np.ascontiguousarray(bundle.labels, dtype="<u4").tobytes(),
        np.ascontiguousarray(bundle.features, dtype="<f4").tobytes(),
    ]
    for classes in (bundle.seen_classes, bundle.unseen_classes):
        chunks.append(struct.pack("<I", len(classes)))
        chunks.append(np.ascontiguousarray(classes, dtype="<u4").tobytes())
    for idx in (bundle.train_indices, bundle.seen_test_indices, bundle.unseen_test_indices):
        chunks.append(struct.pack("<Q", len(idx)))
        chunks.append(np.ascontiguousarray(idx, dtype="<u4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_zsb(path: str | Path) -> DatasetBundle:
    """Parse and validate a ZSB1 file; malformed bytes raise FormatError and
    invariant violations raise IntegrityError."""
    blob = Path(path).read_bytes()
    if blob[:4] != ZSB_MAGIC:
        raise FormatError(f"not a ZSB1 file: bad magic {blob[:4]!r}")
    pos = 4
    end = len(blob)

    def take(n: int, what: str) -> int:
        nonlocal pos
        if pos + n > end:
            raise FormatError(f"truncated ZSB1 file while reading {what}")
        start = pos
        pos += n
        return start

    (version,) = struct.unpack_from("<I", blob, take(4, "version"))
    if version != ZSB_VERSION:
        raise FormatError(f"unsupported ZSB1 version {version}")
    (n,) = struct.unpack_from("<Q", blob, take(8, "sample count"))
    (f,) = struct.unpack_from("<I", blob, take(4, "feature dim"))
    (c,) = struct.unpack_from("<I", blob, take(4, "class count"))
    (d,) = struct.unpack_from("<I", blob, take(4, "attribute dim"))

    def read_f32(count: int, shape, what: str) -> np.ndarray:
        raw = blob[take(4 * count, what) : pos]
        return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()

    def read_u32(count: int, what: str) -> np.ndarray:
        raw = blob[take(4 * count, what) : pos]
        return np.frombuffer(raw, dtype="<u4").copy()

    attributes = read_f32(c * d, (c, d), "attributes")
    labels = read_u32(n, "labels")
    features = read_f32(n * f, (n, f), "features")
    class_lists = []
    for what in ("seen_classes", "unseen_classes"):
        (count,) = struct.unpack_from("<I", blob, take(4, f"{what} length"))
        class_lists.append(read_u32(count, what))
    index_lists = []
    for what in ("train_indices", "seen_test_indices", "unseen_test_indices"):
        (count,) = struct.unpack_from("<Q", blob, take(8, f"{what} length"))
        index_lists.append(read_u32(count, what))
    if pos != end:
        raise FormatError(f"{end - pos} trailing bytes after ZSB1 payload")
    bundle = DatasetBundle(
        features=features,
        labels=labels,
        attributes=attributes,
        seen_classes=class_lists[0],
        unseen_classes=class_lists[1],
        train_indices=index_lists[0],
        seen_test_indices=index_lists[1],
        unseen_test_indices=index_lists[2],
    )
    bundle.validate()
    return bundle


def fewshot_subsample(bundle: DatasetBundle, k: int, rng: Rng) -> DatasetBundle:
    """Keep min(k, available) uniformly chosen train samples per seen class.

    Test partitions are untouched, so evaluation stays comparable across
    shot budgets.
    """
    if k < 1:
        raise ParameterError(f"fewshot k must be >= 1, got {k}")
    kept = []
    for c in sorted(int(c) for c in bundle.seen_classes):
        idx = bundle.train_indices_by_class[c]
        if idx.size > k:
            idx = np.sort(rng.choice(idx, k))
        kept.append(idx)
    new_train = np.concatenate(kept).astype(np.uint32) if kept else np.zeros(0, np.uint32)
    out = replace(bundle, train_indices=new_train)
    out.validate()
    return out


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for the desk-scale benchmark: class attributes drawn uniform in
    [0,1]^d, features normal around a shared linear map of the attributes."""

    n_classes: int = 20
    attr_dim: int = 8
    feat_dim: int = 32
    samples_per_class: int = 100
    noise_sigma: float = 0.05
    seen_fraction: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 4:
            raise ParameterError(f"n_classes must be >= 4, got {self.n_classes}")
        if not 0.0 < self.seen_fraction < 1.0:
            raise ParameterError(
                f"seen_fraction must be in (0, 1), got {self.seen_fraction}"
            )
        n_seen = self.n_seen
        if n_seen < 2 or self.n_classes - n_seen < 2:
            raise ParameterError(
                "seen_fraction must leave at least 2 classes on each side, "
                f"got {n_seen} seen / {self.n_classes - n_seen} unseen"
            )
        if self.attr_dim < 1 or self.feat_dim < 1 or self.samples_per_class < 1:
            raise ParameterError("attr_dim, feat_dim and samples_per_class must be >= 1")
        if self.noise_sigma < 0:
            raise ParameterError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

    @property
    def n_seen(self) -> int:
        return int(round(self.n_classes * self.seen_fraction))


def _synthetic_truth(spec: SyntheticSpec, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Attribute matrix and per-class feature means, in rng draw order."""
    attributes = rng.uniform((spec.n_classes, spec.attr_dim)).astype(np.float32)
    scale = 1.0 / np.sqrt(spec.attr_dim)
    w = rng.normal((spec.feat_dim, spec.attr_dim), std=scale)
    b = rng.normal((spec.feat_dim,), std=scale)
    means = attributes @ w.T + b
    return attributes, means.astype(np.float32)


def synthetic_class_means(spec: SyntheticSpec) -> np.ndarray:
    """Ground-truth class means; the oracle that bounds benchmark difficulty."""
    _, means = _synthetic_truth(spec, Rng(spec.seed))
    return means


def gen_synthetic(spec: SyntheticSpec) -> DatasetBundle:
    """Generate a solvable attribute-conditioned benchmark, deterministically.

    Classes are shuffled, the first round(C * seen_fraction) become seen;
    within each seen class 70% of samples go to train and 30% to seen_test,
    while unseen-class samples are all test data.
    """
    rng = Rng(spec.seed)
    attributes, means = _synthetic_truth(spec, rng)
    per = spec.samples_per_class
    n_total = spec.n_classes * per
    features = np.empty((n_total, spec.feat_dim), dtype=np.float32)
    labels = np.empty(n_total, dtype=np.uint32)
    for c in range(spec.n_classes):
        block = slice(c * per, (c + 1) * per)
        noise = rng.normal((per, spec.feat_dim), std=1.0) * spec.noise_sigma
        features[block] = means[c] + noise
        labels[block] = c
    order = rng.permutation(spec.n_classes)
    seen = np.sort(order[: spec.n_seen]).astype(np.uint32)
    unseen = np.sort(order[spec.n_seen :]).astype(np.uint32)
    seen_set = set(seen.tolist())
    n_train_per = int(round(0.7 * per))
    train, seen_test, unseen_test = [], [], []
    for c in range(spec.n_classes):
        idx = np.arange(c * per, (c + 1) * per, dtype=np.uint32)
        if c in seen_set:
            train.append(idx[:n_train_per])
            seen_test.append(idx[n_train_per:])
        else:
            unseen_test.append(idx)
    bundle = DatasetBundle(
        features=features,
        labels=labels,
        attributes=attributes,
        seen_classes=seen,
        unseen_classes=unseen,
        train_indices=np.concatenate(train),
        seen_test_indices=np.concatenate(seen_test),
        unseen_test_indices=np.concatenate(unseen_test),
    )
    bundle.validate()
    return bundle


def minmax_scale_attributes(bundle: DatasetBundle) -> DatasetBundle:
    """Rescale each attribute dimension to [0, 1] over the class set.

    Off by default everywhere; constant dimensions are left at zero.
    """
    a = bundle.attributes
    lo = a.min(axis=0)
    span = a.max(axis=0) - lo
    span[span == 0] = 1.0
    return replace(bundle, attributes=((a - lo) / span).astype(np.float32))


def bundle_summary(bundle: DatasetBundle) -> dict:
    """Counts used by the CLI's machine-readable summaries."""
    return {
        "n_samples": int(bundle.n_samples),
        "feat_dim": int(bundle.feat_dim),
        "attr_dim": int(bundle.attr_dim),
        "n_classes": int(bundle.n_classes),
        "n_seen_classes": int(len(bundle.seen_classes)),
        "n_unseen_classes": int(len(bundle.unseen_classes)),
        "n_train": int(len(bundle.train_indices)),
        "n_seen_test": int(len(bundle.seen_test_indices)),
        "n_unseen_test": int(len(bundle.unseen_test_indices)),
    }
