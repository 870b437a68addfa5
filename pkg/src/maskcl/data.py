"""Dataset ingestion and task-stream construction.

Handles the big-endian IDX image/label containers, the three MNIST task
families (pixel permutation, rotation, class split), and seeded synthetic
Gaussian tasks used when no image data is available.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

DATA_DIR_ENV = "MASKCL_DATA_DIR"


@dataclass
class BaseDataset:
    """Flattened images in [0, 1] with integer labels, train and test halves."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int = 10


@dataclass
class TaskDataset:
    """One task's view of the data with labels remapped to [0, num_classes)."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int
    descriptor: str = ""


def _read_exact(f, count, path, what):
    data = f.read(count)
    if len(data) != count:
        raise DataError(
            f"{path}: truncated while reading {what} at offset {f.tell() - len(data)}"
        )
    return data


def load_idx(images_path, labels_path):
    """Parse one IDX image file and its label file into (x, y).

    Pixel bytes are scaled by 1/255 into float64; image and label counts
    must agree.
    """
    with open(images_path, "rb") as f:
        magic = struct.unpack(">I", _read_exact(f, 4, images_path, "magic"))[0]
        if magic != IDX_IMAGE_MAGIC:
            raise DataError(
                f"{images_path}: bad image magic 0x{magic:08x} at offset 0, "
                f"expected 0x{IDX_IMAGE_MAGIC:08x}"
            )
        count, rows, cols = struct.unpack(
            ">III", _read_exact(f, 12, images_path, "dimensions")
        )
        raw = _read_exact(f, count * rows * cols, images_path, "pixels")
        x = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
        x = x.reshape(count, rows * cols)
    with open(labels_path, "rb") as f:
        magic = struct.unpack(">I", _read_exact(f, 4, labels_path, "magic"))[0]
        if magic != IDX_LABEL_MAGIC:
            raise DataError(
                f"{labels_path}: bad label magic 0x{magic:08x} at offset 0, "
                f"expected 0x{IDX_LABEL_MAGIC:08x}"
            )
        (n_labels,) = struct.unpack(">I", _read_exact(f, 4, labels_path, "count"))
        y = np.frombuffer(
            _read_exact(f, n_labels, labels_path, "labels"), dtype=np.uint8
        ).astype(np.int64)
    if count != n_labels:
        raise DataError(
            f"image count {count} ({images_path}) does not match "
            f"label count {n_labels} ({labels_path})"
        )
    return x, y


def find_mnist_dir(data_dir=None):
    """Directory holding the four standard MNIST files, or None."""
    candidates = [data_dir, os.environ.get(DATA_DIR_ENV), "data"]
    for cand in candidates:
        if cand and all(
            os.path.exists(os.path.join(cand, name)) for name in MNIST_FILES.values()
        ):
            return cand
    return None


def load_mnist(data_dir) -> BaseDataset:
    path = lambda key: os.path.join(data_dir, MNIST_FILES[key])
    train_x, train_y = load_idx(path("train_images"), path("train_labels"))
    test_x, test_y = load_idx(path("test_images"), path("test_labels"))
    return BaseDataset(train_x, train_y, test_x, test_y, 10)


def make_permuted(base: BaseDataset, task_seed) -> TaskDataset:
    """Apply one fixed pixel permutation to every train and test image.

    Seed 0 is reserved for the identity permutation.
    """
    dim = base.train_x.shape[1]
    if task_seed == 0:
        perm = np.arange(dim)
    else:
        perm = np.random.default_rng(task_seed).permutation(dim)
    return TaskDataset(
        base.train_x[:, perm],
        base.train_y.copy(),
        base.test_x[:, perm],
        base.test_y.copy(),
        base.num_classes,
        descriptor=f"permute(seed={task_seed})",
    )


def _rotate_images(flat, degrees):
    """Bilinear rotation about the image center with zero fill outside."""
    n, dim = flat.shape
    side = int(round(np.sqrt(dim)))
    if side * side != dim:
        raise DataError(f"rotation needs square images, got {dim} pixels")
    theta = np.deg2rad(degrees)
    center = (side - 1) / 2.0
    out_i, out_j = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    di = out_i - center
    dj = out_j - center
    # inverse map: sample the source at the backward-rotated coordinate
    src_i = np.cos(theta) * di + np.sin(theta) * dj + center
    src_j = -np.sin(theta) * di + np.cos(theta) * dj + center
    i0 = np.floor(src_i).astype(np.int64)
    j0 = np.floor(src_j).astype(np.int64)
    fi = src_i - i0
    fj = src_j - j0
    total = np.zeros((n, side, side))
    imgs = flat.reshape(n, side, side)
    for oi, oj, weight in (
        (i0, j0, (1 - fi) * (1 - fj)),
        (i0, j0 + 1, (1 - fi) * fj),
        (i0 + 1, j0, fi * (1 - fj)),
        (i0 + 1, j0 + 1, fi * fj),
    ):
        valid = (oi >= 0) & (oi < side) & (oj >= 0) & (oj < side)
        ci = np.clip(oi, 0, side - 1)
        cj = np.clip(oj, 0, side - 1)
        total += imgs[:, ci, cj] * (weight * valid)
    return total.reshape(n, dim)


def make_rotated(base: BaseDataset, degrees, step=10) -> TaskDataset:
    """Rotate every image by the given multiple of the configured step."""
    if step and degrees % step != 0:
        raise DataError(f"rotation {degrees} is not a multiple of step {step}")
    return TaskDataset(
        _rotate_images(base.train_x, degrees),
        base.train_y.copy(),
        _rotate_images(base.test_x, degrees),
        base.test_y.copy(),
        base.num_classes,
        descriptor=f"rotate({degrees})",
    )


def make_split(base: BaseDataset, class_pair) -> TaskDataset:
    """Filter to two classes and relabel them to {0, 1}."""
    a, b = class_pair
    if a == b:
        raise DataError("split classes must differ")

    def view(x, y):
        keep = (y == a) | (y == b)
        if not keep.any():
            raise DataError(f"no examples for classes {class_pair}")
        labels = (y[keep] == b).astype(np.int64)
        return x[keep], labels

    train_x, train_y = view(base.train_x, base.train_y)
    test_x, test_y = view(base.test_x, base.test_y)
    return TaskDataset(
        train_x, train_y, test_x, test_y, 2, descriptor=f"split({a},{b})"
    )


def make_synthetic(
    num_tasks,
    dim,
    num_classes,
    seed,
    train_per_class=200,
    test_per_class=50,
    ambient_std=0.05,
) -> list:
    """Seeded Gaussian-blob tasks, each with its own rotation of feature space.

    Within a task the blobs share an anisotropic shape: unit spread along a
    low-dimensional frame (rotated per task) and ambient_std elsewhere, so
    every sample carries the identity of its task's frame, the way a
    permuted image carries its permutation. Class centers sit 6 major
    standard deviations apart, so a linear model separates them almost
    perfectly; the tasks are the network-free fixture behind the inference
    oracles.
    """
    if dim < num_classes:
        raise DataError(f"dim={dim} must be at least num_classes={num_classes}")
    latent = min(2 * num_classes, dim)
    radius = 6.0 / np.sqrt(2.0)  # orthonormal centers scaled for 6-sigma gaps
    centers_latent = radius * np.eye(latent)[:num_classes]
    tasks = []
    for t in range(num_tasks):
        rng = np.random.default_rng([seed, t])
        q, _ = np.linalg.qr(rng.standard_normal((dim, latent)))

        def draw(per_class):
            xs, ys = [], []
            for c in range(num_classes):
                z = centers_latent[c] + rng.standard_normal((per_class, latent))
                x = z @ q.T + ambient_std * rng.standard_normal((per_class, dim))
                xs.append(x)
                ys.append(np.full(per_class, c, dtype=np.int64))
            x = np.vstack(xs)
            y = np.concatenate(ys)
            order = rng.permutation(x.shape[0])
            return x[order], y[order]

        train_x, train_y = draw(train_per_class)
        test_x, test_y = draw(test_per_class)
        tasks.append(
            TaskDataset(
                train_x,
                train_y,
                test_x,
                test_y,
                num_classes,
                descriptor=f"synthetic(task={t},seed={seed})",
            )
        )
    return tasks


def standardize_task(task: TaskDataset) -> TaskDataset:
    """Per-feature standardization using the task's training statistics."""
    mean = task.train_x.mean(axis=0)
    std = task.train_x.std(axis=0)
    std[std == 0.0] = 1.0
    return TaskDataset(
        (task.train_x - mean) / std,
        task.train_y,
        (task.test_x - mean) / std,
        task.test_y,
        task.num_classes,
        task.descriptor + "+standardized",
    )


def stream_batches(tasks, batches_per_task, batch_size, seed):
    """Sequential training batches over the task list with no task identifiers."""
    for t, task in enumerate(tasks):
        rng = np.random.default_rng([seed, 900 + t])
        n = task.train_x.shape[0]
        take = min(batch_size, n)
        order = rng.permutation(n)
        pos = 0
        for _ in range(batches_per_task):
            if pos + take > n:
                order = rng.permutation(n)
                pos = 0
            idx = order[pos : pos + take]
            pos += take
            yield task.train_x[idx], task.train_y[idx]
