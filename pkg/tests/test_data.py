"""IDX ingestion and task construction: permute, rotate, split, synthetic."""

import struct

import numpy as np
import pytest

from maskcl import DataError, load_idx
from maskcl.data import (
    BaseDataset,
    make_permuted,
    make_rotated,
    make_split,
    make_synthetic,
    standardize_task,
    stream_batches,
)


def idx_image_bytes(images, magic=0x00000803):
    n, rows, cols = images.shape
    return struct.pack(">IIII", magic, n, rows, cols) + images.astype(np.uint8).tobytes()


def idx_label_bytes(labels, magic=0x00000801):
    return struct.pack(">II", magic, len(labels)) + bytes(int(v) for v in labels)


@pytest.fixture
def idx_pair(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(3, 28, 28)).astype(np.uint8)
    images[0, 0, 0] = 255
    labels = np.array([7, 0, 3])
    img_path = tmp_path / "imgs"
    lab_path = tmp_path / "labs"
    img_path.write_bytes(idx_image_bytes(images))
    lab_path.write_bytes(idx_label_bytes(labels))
    return img_path, lab_path, images, labels


class TestLoadIdx:
    def test_well_formed_fixture(self, idx_pair):
        img_path, lab_path, images, labels = idx_pair
        x, y = load_idx(img_path, lab_path)
        assert x.shape == (3, 784)
        assert x.min() >= 0.0 and x.max() <= 1.0
        np.testing.assert_array_equal(y, labels)

    def test_byte_255_scales_to_exactly_one(self, idx_pair):
        img_path, lab_path, *_ = idx_pair
        x, _ = load_idx(img_path, lab_path)
        assert x[0, 0] == 1.0

    def test_bad_magic_rejected(self, tmp_path, idx_pair):
        _, lab_path, images, _ = idx_pair
        bad = tmp_path / "bad"
        bad.write_bytes(idx_image_bytes(images, magic=0x00000802))
        with pytest.raises(DataError, match="magic"):
            load_idx(bad, lab_path)

    def test_truncated_file_rejected(self, tmp_path, idx_pair):
        img_path, lab_path, images, _ = idx_pair
        cut = tmp_path / "cut"
        cut.write_bytes(idx_image_bytes(images)[:-10])
        with pytest.raises(DataError, match="truncated"):
            load_idx(cut, lab_path)

    def test_count_mismatch_rejected(self, tmp_path, idx_pair):
        img_path, _, _, _ = idx_pair
        short = tmp_path / "short"
        short.write_bytes(idx_label_bytes(np.array([1, 2])))
        with pytest.raises(DataError, match="count"):
            load_idx(img_path, short)


@pytest.fixture
def base():
    rng = np.random.default_rng(1)
    return BaseDataset(
        rng.random((40, 64)),
        rng.integers(0, 10, size=40),
        rng.random((20, 64)),
        rng.integers(0, 10, size=20),
        10,
    )


class TestPermuted:
    def test_seed_zero_is_identity(self, base):
        task = make_permuted(base, 0)
        np.testing.assert_array_equal(task.train_x, base.train_x)

    def test_pixel_multiset_preserved(self, base):
        task = make_permuted(base, 99)
        for i in range(5):
            np.testing.assert_allclose(
                np.sort(task.train_x[i]), np.sort(base.train_x[i]), atol=0
            )

    def test_same_seed_same_permutation(self, base):
        a = make_permuted(base, 42)
        b = make_permuted(base, 42)
        np.testing.assert_array_equal(a.train_x, b.train_x)

    def test_applied_to_test_split_too(self, base):
        task = make_permuted(base, 5)
        perm = np.random.default_rng(5).permutation(64)
        np.testing.assert_array_equal(task.test_x, base.test_x[:, perm])


@pytest.fixture
def image_base():
    rng = np.random.default_rng(2)
    imgs = np.zeros((6, 28, 28))
    imgs[:, 8:20, 8:20] = rng.random((6, 12, 12))
    flat = imgs.reshape(6, 784)
    return BaseDataset(flat, np.arange(6) % 10, flat[:3], np.arange(3), 10)


class TestRotated:
    def test_zero_degrees_unchanged(self, image_base):
        task = make_rotated(image_base, 0)
        np.testing.assert_allclose(task.train_x, image_base.train_x, atol=1e-12)

    def test_full_turn_closes(self, image_base):
        task = make_rotated(image_base, 360)
        np.testing.assert_allclose(task.train_x, image_base.train_x, atol=1e-6)

    def test_quarter_turn_preserves_mass(self, image_base):
        task = make_rotated(image_base, 90)
        for orig, rot in zip(image_base.train_x, task.train_x):
            assert abs(rot.sum() - orig.sum()) <= 0.02 * orig.sum()

    def test_non_multiple_of_step_rejected(self, image_base):
        with pytest.raises(DataError):
            make_rotated(image_base, 7)


class TestSplit:
    @pytest.fixture
    def labeled_base(self):
        rng = np.random.default_rng(3)
        y = np.repeat(np.arange(10), 12)
        x = rng.random((120, 16))
        ty = np.repeat(np.arange(10), 4)
        tx = rng.random((40, 16))
        return BaseDataset(x, y, tx, ty, 10)

    def test_pair_relabels_to_binary(self, labeled_base):
        task = make_split(labeled_base, (0, 1))
        assert set(np.unique(task.train_y)) == {0, 1}
        assert task.num_classes == 2

    def test_five_splits_partition_base(self, labeled_base):
        sizes = 0
        for t in range(5):
            task = make_split(labeled_base, (2 * t, 2 * t + 1))
            sizes += task.train_x.shape[0]
        assert sizes == labeled_base.train_x.shape[0]

    def test_counts_match_label_histogram(self, labeled_base):
        counts = np.bincount(labeled_base.train_y, minlength=10)
        task = make_split(labeled_base, (4, 5))
        assert task.train_x.shape[0] == counts[4] + counts[5]
        assert (task.train_y == 1).sum() == counts[5]

    def test_missing_class_rejected(self):
        base = BaseDataset(
            np.zeros((4, 3)), np.zeros(4, dtype=int), np.zeros((2, 3)),
            np.zeros(2, dtype=int), 10,
        )
        with pytest.raises(DataError):
            make_split(base, (6, 7))


class TestSynthetic:
    def test_linear_oracle_separates(self):
        from sklearn.linear_model import LogisticRegression

        task = make_synthetic(1, 10, 2, seed=0)[0]
        clf = LogisticRegression(max_iter=2000).fit(task.train_x, task.train_y)
        assert clf.score(task.test_x, task.test_y) >= 0.99

    def test_same_seed_identical(self):
        a = make_synthetic(2, 12, 3, seed=7)
        b = make_synthetic(2, 12, 3, seed=7)
        for ta, tb in zip(a, b):
            np.testing.assert_array_equal(ta.train_x, tb.train_x)
            np.testing.assert_array_equal(ta.test_y, tb.test_y)

    def test_tasks_differ(self):
        tasks = make_synthetic(2, 12, 3, seed=8)
        assert not np.allclose(tasks[0].train_x[:5], tasks[1].train_x[:5])

    def test_center_separation_at_least_six_sigma(self):
        task = make_synthetic(1, 16, 4, seed=9, train_per_class=500)[0]
        centers = [task.train_x[task.train_y == c].mean(axis=0) for c in range(4)]
        for i in range(4):
            for j in range(i + 1, 4):
                gap = np.linalg.norm(centers[i] - centers[j])
                assert gap >= 5.5  # 6 minus estimation noise

    def test_dim_below_classes_rejected(self):
        with pytest.raises(DataError):
            make_synthetic(1, 3, 5, seed=0)


class TestStandardize:
    def test_train_statistics_normalized(self):
        task = make_synthetic(1, 8, 2, seed=3)[0]
        std_task = standardize_task(task)
        np.testing.assert_allclose(std_task.train_x.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(std_task.train_x.std(axis=0), 1.0, atol=1e-12)


class TestStream:
    def test_batch_count_and_shapes(self):
        tasks = make_synthetic(3, 8, 2, seed=4, train_per_class=40)
        batches = list(stream_batches(tasks, 5, 16, seed=0))
        assert len(batches) == 15
        assert all(x.shape == (16, 8) and y.shape == (16,) for x, y in batches)

    def test_deterministic(self):
        tasks = make_synthetic(2, 8, 2, seed=5, train_per_class=40)
        a = list(stream_batches(tasks, 3, 8, seed=1))
        b = list(stream_batches(tasks, 3, 8, seed=1))
        for (xa, ya), (xb, yb) in zip(a, b):
            np.testing.assert_array_equal(xa, xb)
            np.testing.assert_array_equal(ya, yb)
