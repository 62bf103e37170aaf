import struct

import numpy as np
import pytest

from zsml.autodiff import Rng
from zsml.data import (
    DatasetBundle,
    SyntheticSpec,
    ZSB_MAGIC,
    bundle_summary,
    fewshot_subsample,
    gen_synthetic,
    load_zsb,
    minmax_scale_attributes,
    save_zsb,
    synthetic_class_means,
)
from zsml.errors import FormatError, IntegrityError, ParameterError


@pytest.fixture(scope="module")
def default_bundle():
    return gen_synthetic(SyntheticSpec())


@pytest.fixture(scope="module")
def forty_seen_bundle():
    # 50 classes at seen_fraction 0.8 -> 40 seen / 10 unseen
    return gen_synthetic(SyntheticSpec(n_classes=50, seen_fraction=0.8, seed=3))


class TestRoundTrip:
    def test_save_load_checksum_identical(self, default_bundle, tmp_path):
        path = tmp_path / "bundle.zsb"
        save_zsb(default_bundle, path)
        loaded = load_zsb(path)
        assert loaded.checksum() == default_bundle.checksum()

    def test_truncated_file_is_format_error(self, default_bundle, tmp_path):
        path = tmp_path / "bundle.zsb"
        save_zsb(default_bundle, path)
        blob = path.read_bytes()
        for cut in (3, 10, len(blob) // 2, len(blob) - 1):
            short = tmp_path / f"cut{cut}.zsb"
            short.write_bytes(blob[:cut])
            with pytest.raises(FormatError):
                load_zsb(short)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.zsb"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(FormatError, match="magic"):
            load_zsb(path)

    def test_bad_version(self, default_bundle, tmp_path):
        path = tmp_path / "bundle.zsb"
        save_zsb(default_bundle, path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = struct.pack("<I", 99)
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="version"):
            load_zsb(path)

    def test_trailing_bytes_rejected(self, default_bundle, tmp_path):
        path = tmp_path / "bundle.zsb"
        save_zsb(default_bundle, path)
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(FormatError, match="trailing"):
            load_zsb(path)


def _raw_zsb(seen, unseen, train, seen_test, unseen_test, labels):
    """Hand-assembled tiny ZSB1 file, bypassing writer-side validation."""
    n, f, c, d = len(labels), 2, 4, 1
    chunks = [
        ZSB_MAGIC,
        struct.pack("<I", 1),
        struct.pack("<Q", n),
        struct.pack("<I", f),
        struct.pack("<I", c),
        struct.pack("<I", d),
        np.zeros((c, d), dtype="<f4").tobytes(),
        np.asarray(labels, dtype="<u4").tobytes(),
        np.zeros((n, f), dtype="<f4").tobytes(),
    ]
    for classes in (seen, unseen):
        chunks.append(struct.pack("<I", len(classes)))
        chunks.append(np.asarray(classes, dtype="<u4").tobytes())
    for idx in (train, seen_test, unseen_test):
        chunks.append(struct.pack("<Q", len(idx)))
        chunks.append(np.asarray(idx, dtype="<u4").tobytes())
    return b"".join(chunks)


class TestCorruptionHarness:
    def test_overlapping_class_lists(self, tmp_path):
        path = tmp_path / "overlap.zsb"
        path.write_bytes(
            _raw_zsb([0, 1], [1, 2, 3], [0], [1], [2, 3], labels=[0, 0, 2, 3])
        )
        with pytest.raises(IntegrityError, match="overlap"):
            load_zsb(path)

    def test_train_index_pointing_at_unseen_class(self, tmp_path):
        path = tmp_path / "bad_train.zsb"
        path.write_bytes(_raw_zsb([0, 1], [2, 3], [2], [1], [3], labels=[0, 1, 2, 3]))
        with pytest.raises(IntegrityError, match="train"):
            load_zsb(path)

    def test_non_disjoint_index_lists(self, tmp_path):
        path = tmp_path / "dup.zsb"
        path.write_bytes(_raw_zsb([0, 1], [2, 3], [0, 1], [1], [2, 3], labels=[0, 1, 2, 3]))
        with pytest.raises(IntegrityError, match="disjoint"):
            load_zsb(path)

    def test_save_also_validates(self, default_bundle, tmp_path):
        from dataclasses import replace

        broken = replace(default_bundle, unseen_classes=default_bundle.seen_classes)
        with pytest.raises(IntegrityError):
            save_zsb(broken, tmp_path / "x.zsb")


class TestFewshotSubsample:
    def test_forty_classes_five_shot_gives_200(self, forty_seen_bundle):
        out = fewshot_subsample(forty_seen_bundle, 5, Rng(0))
        assert len(out.train_indices) == 5 * 40 == 200

    def test_forty_classes_ten_shot_gives_400(self, forty_seen_bundle):
        out = fewshot_subsample(forty_seen_bundle, 10, Rng(0))
        assert len(out.train_indices) == 400
        counts = np.bincount(out.labels[out.train_indices], minlength=50)
        assert all(counts[c] == 10 for c in forty_seen_bundle.seen_classes)

    def test_saturating_k_keeps_bundle(self, default_bundle):
        out = fewshot_subsample(default_bundle, 10_000, Rng(0))
        assert sorted(out.train_indices.tolist()) == sorted(
            default_bundle.train_indices.tolist()
        )

    def test_k_zero_rejected(self, default_bundle):
        with pytest.raises(ParameterError):
            fewshot_subsample(default_bundle, 0, Rng(0))

    def test_test_partitions_untouched(self, forty_seen_bundle):
        out = fewshot_subsample(forty_seen_bundle, 5, Rng(1))
        np.testing.assert_array_equal(
            out.seen_test_indices, forty_seen_bundle.seen_test_indices
        )
        np.testing.assert_array_equal(
            out.unseen_test_indices, forty_seen_bundle.unseen_test_indices
        )
        out.validate()


class TestSynthetic:
    def test_default_counts(self, default_bundle):
        summary = bundle_summary(default_bundle)
        assert summary["n_seen_classes"] == 15
        assert summary["n_unseen_classes"] == 5
        assert summary["n_train"] == 1050
        assert summary["n_seen_test"] == 450
        assert summary["n_unseen_test"] == 500

    def test_noiseless_limit_matches_true_means(self):
        spec = SyntheticSpec(noise_sigma=0.0, samples_per_class=5, seed=9)
        bundle = gen_synthetic(spec)
        means = synthetic_class_means(spec)
        for c in range(spec.n_classes):
            rows = bundle.features[bundle.labels == c]
            np.testing.assert_array_equal(rows, np.tile(means[c], (5, 1)))

    def test_nearest_mean_oracle_solves_benchmark(self, default_bundle):
        # The oracle that bounds any learned pipeline: classify unseen test
        # rows to the nearest true class mean over the unseen label space.
        spec = SyntheticSpec()
        means = synthetic_class_means(spec)
        unseen = np.sort(default_bundle.unseen_classes).astype(np.int64)
        x = default_bundle.features[default_bundle.unseen_test_indices]
        y = default_bundle.labels[default_bundle.unseen_test_indices].astype(np.int64)
        dists = ((x[:, None, :] - means[unseen][None, :, :]) ** 2).sum(axis=2)
        preds = unseen[np.argmin(dists, axis=1)]
        assert (preds == y).mean() >= 0.99

    def test_deterministic_per_seed(self):
        a = gen_synthetic(SyntheticSpec(seed=21))
        b = gen_synthetic(SyntheticSpec(seed=21))
        c = gen_synthetic(SyntheticSpec(seed=22))
        assert a.checksum() == b.checksum()
        assert a.checksum() != c.checksum()

    def test_spec_validation(self):
        with pytest.raises(ParameterError, match="n_classes"):
            SyntheticSpec(n_classes=3)
        with pytest.raises(ParameterError, match="each side"):
            SyntheticSpec(n_classes=10, seen_fraction=0.95)
        with pytest.raises(ParameterError):
            SyntheticSpec(seen_fraction=1.5)

    def test_minmax_attribute_scaling(self, default_bundle):
        scaled = minmax_scale_attributes(default_bundle)
        assert scaled.attributes.min() >= 0.0
        assert scaled.attributes.max() <= 1.0 + 1e-6
        np.testing.assert_allclose(scaled.attributes.max(axis=0), 1.0, atol=1e-6)
