"""MNIST IDX loading and task-stream generators.

Streams are ordered sequences of per-task train/test datasets. Generators
are pure functions of their inputs and seed: the same call always yields the
same stream, and every transformation is applied identically to a task's
train and test partitions.
"""

from __future__ import annotations

import csv
import gzip
import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .validation import ConfigurationError, IdxFormatError, as_float_matrix, as_label_vector

__all__ = [
    "LabeledDataset",
    "Task",
    "TaskStream",
    "load_mnist_idx",
    "permuted_stream",
    "rotated_stream",
    "split_stream",
    "synthetic_gaussian_stream",
    "export_stream_csv",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    """Inputs in [0, 1] with integer class labels below ``num_classes``."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.inputs = as_float_matrix(self.inputs, "inputs")
        self.labels = as_label_vector(self.labels, "labels")
        if self.labels.shape[0] != self.inputs.shape[0]:
            raise ValueError(
                f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels"
            )
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(
                f"labels must lie in [0, {self.num_classes})"
            )
        if self.inputs.size and (self.inputs.min() < 0.0 or self.inputs.max() > 1.0):
            raise ValueError("inputs must lie in [0, 1]")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def width(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        return LabeledDataset(self.inputs[indices], self.labels[indices], self.num_classes)


@dataclass
class Task:
    train: LabeledDataset
    test: LabeledDataset
    task_id: int


@dataclass
class TaskStream:
    tasks: list[Task]
    kind: str

    def __post_init__(self):
        if len(self.tasks) < 2:
            raise ConfigurationError("a task stream needs at least 2 tasks")

    def __len__(self) -> int:
        return len(self.tasks)

    @property
    def num_classes(self) -> int:
        return max(t.train.num_classes for t in self.tasks)

    @property
    def width(self) -> int:
        return self.tasks[0].train.width


def _read_idx(path, expected_magic: int, expected_dims: int, kind: str):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 * (1 + expected_dims):
        raise IdxFormatError(f"{kind} file {path} is too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(
            f"{kind} file {path} has magic 0x{magic:08x}, "
            f"expected 0x{expected_magic:08x}"
        )
    dims = struct.unpack(f">{expected_dims}I", raw[4 : 4 + 4 * expected_dims])
    payload = raw[4 + 4 * expected_dims :]
    expected_len = math.prod(dims)
    if len(payload) != expected_len:
        raise IdxFormatError(
            f"{kind} file {path} declares {expected_len} bytes but carries "
            f"{len(payload)}"
        )
    return dims, np.frombuffer(payload, dtype=np.uint8)


def load_mnist_idx(images_path, labels_path) -> LabeledDataset:
    """Parse a big-endian IDX image/label file pair, scaling pixels by 1/255.

    Accepts raw or gzip-compressed files. Raises ``IdxFormatError`` on a bad
    magic number, a payload shorter or longer than the header declares, or an
    image/label count mismatch.
    """
    (n_images, rows, cols), pixels = _read_idx(images_path, IDX_IMAGES_MAGIC, 3, "images")
    (n_labels,), labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1, "labels")
    if n_images != n_labels:
        raise IdxFormatError(
            f"{n_images} images in {images_path} but {n_labels} labels in {labels_path}"
        )
    inputs = pixels.reshape(n_images, rows * cols).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    num_classes = int(labels.max()) + 1 if labels.size else 1
    return LabeledDataset(inputs=inputs, labels=labels, num_classes=num_classes)


def _subsample(ds: LabeledDataset, n: int | None, rng: np.random.Generator) -> LabeledDataset:
    if n is None or n >= len(ds):
        return ds
    idx = rng.choice(len(ds), size=n, replace=False)
    return ds.subset(np.sort(idx))


def permuted_stream(
    train_base: LabeledDataset,
    test_base: LabeledDataset,
    num_tasks: int,
    train_per_task: int | None = None,
    test_per_task: int | None = None,
    seed: int = 0,
) -> TaskStream:
    """Tasks that differ by a fixed random pixel permutation.

    Task 1 keeps the identity permutation; each later task draws an
    independent permutation from the seed and applies it to train and test
    alike. When per-task sizes are given, the base subsets are drawn once and
    shared by every task, so tasks differ only by their permutation.
    """
    if num_tasks < 2:
        raise ConfigurationError("num_tasks must be >= 2")
    rng = np.random.default_rng(seed)
    train = _subsample(train_base, train_per_task, rng)
    test = _subsample(test_base, test_per_task, rng)
    tasks = []
    for t in range(num_tasks):
        if t == 0:
            perm = np.arange(train.width)
        else:
            perm = rng.permutation(train.width)
        tasks.append(
            Task(
                train=LabeledDataset(train.inputs[:, perm], train.labels, train.num_classes),
                test=LabeledDataset(test.inputs[:, perm], test.labels, test.num_classes),
                task_id=t,
            )
        )
    return TaskStream(tasks=tasks, kind="permuted")


def _rotate_images(inputs: np.ndarray, angle_deg: float) -> np.ndarray:
    side = math.isqrt(inputs.shape[1])
    if side * side != inputs.shape[1]:
        raise ConfigurationError(
            f"rotation needs square images, got width {inputs.shape[1]}"
        )
    if angle_deg == 0.0:
        return inputs.copy()
    stack = inputs.reshape(-1, side, side)
    rotated = ndimage.rotate(
        stack, angle_deg, axes=(1, 2), reshape=False, order=1,
        mode="constant", cval=0.0,
    )
    return np.clip(rotated, 0.0, 1.0).reshape(inputs.shape)


def rotated_stream(
    train_base: LabeledDataset,
    test_base: LabeledDataset,
    num_tasks: int,
    train_per_task: int | None = None,
    test_per_task: int | None = None,
    seed: int = 0,
) -> TaskStream:
    """Tasks that differ by a fixed rotation angle.

    Task 1 uses 0 degrees; each later task draws an angle uniformly from
    [0, 180) and rotates both partitions about the image centre with
    bilinear interpolation and zero padding.
    """
    if num_tasks < 2:
        raise ConfigurationError("num_tasks must be >= 2")
    rng = np.random.default_rng(seed)
    train = _subsample(train_base, train_per_task, rng)
    test = _subsample(test_base, test_per_task, rng)
    tasks = []
    for t in range(num_tasks):
        angle = 0.0 if t == 0 else float(rng.uniform(0.0, 180.0))
        tasks.append(
            Task(
                train=LabeledDataset(
                    _rotate_images(train.inputs, angle), train.labels, train.num_classes
                ),
                test=LabeledDataset(
                    _rotate_images(test.inputs, angle), test.labels, test.num_classes
                ),
                task_id=t,
            )
        )
    return TaskStream(tasks=tasks, kind="rotated")


def split_stream(
    train_base: LabeledDataset,
    test_base: LabeledDataset,
    num_tasks: int,
) -> TaskStream:
    """Partition the label space into contiguous, disjoint per-task chunks.

    Labels stay global (a single shared head covers the full class set), so
    task t holds classes [t*C/T, (t+1)*C/T).
    """
    if num_tasks < 2:
        raise ConfigurationError("num_tasks must be >= 2")
    c = train_base.num_classes
    if c % num_tasks != 0:
        raise ConfigurationError(
            f"num_classes {c} is not divisible by num_tasks {num_tasks}"
        )
    per = c // num_tasks
    tasks = []
    for t in range(num_tasks):
        lo, hi = t * per, (t + 1) * per
        train_idx = np.flatnonzero((train_base.labels >= lo) & (train_base.labels < hi))
        test_idx = np.flatnonzero((test_base.labels >= lo) & (test_base.labels < hi))
        tasks.append(
            Task(train=train_base.subset(train_idx), test=test_base.subset(test_idx), task_id=t)
        )
    return TaskStream(tasks=tasks, kind="split")


def synthetic_gaussian_stream(
    dim: int,
    classes_per_task: int,
    num_tasks: int,
    n_per_task: int,
    seed: int = 0,
    sigma: float = 0.1,
    scale: float = 1.0,
    test_per_task: int | None = None,
) -> TaskStream:
    """Fast deterministic stream of isotropic Gaussian classes.

    Every (task, class) pair owns a distinct vertex of the scaled standard
    simplex in ``dim`` dimensions; samples are the vertex plus isotropic
    noise, clipped to [0, 1]. Tasks share the label space 0..classes_per_task-1,
    so successive tasks relocate each class and interfere with earlier ones.
    """
    if dim < 1 or classes_per_task < 1 or n_per_task < 1:
        raise ConfigurationError("dim, classes_per_task and n_per_task must be >= 1")
    if num_tasks < 2:
        raise ConfigurationError("num_tasks must be >= 2")
    if num_tasks * classes_per_task > dim:
        raise ConfigurationError(
            f"need num_tasks*classes_per_task <= dim for distinct class means, "
            f"got {num_tasks * classes_per_task} > {dim}"
        )
    if not (0.0 < scale <= 1.0):
        raise ConfigurationError("scale must lie in (0, 1] to keep inputs in [0, 1]")
    rng = np.random.default_rng(seed)
    n_test = test_per_task if test_per_task is not None else n_per_task

    def make_split(task: int, total: int) -> LabeledDataset:
        counts = [total // classes_per_task] * classes_per_task
        for c in range(total % classes_per_task):
            counts[c] += 1
        xs, ys = [], []
        for c, cnt in enumerate(counts):
            mean = np.zeros(dim)
            mean[task * classes_per_task + c] = scale
            pts = mean + sigma * rng.standard_normal((cnt, dim))
            xs.append(np.clip(pts, 0.0, 1.0))
            ys.append(np.full(cnt, c, dtype=np.int64))
        return LabeledDataset(np.vstack(xs), np.concatenate(ys), classes_per_task)

    tasks = []
    for t in range(num_tasks):
        train = make_split(t, n_per_task)
        test = make_split(t, n_test)
        tasks.append(Task(train=train, test=test, task_id=t))
    return TaskStream(tasks=tasks, kind="synthetic")


def export_stream_csv(stream: TaskStream, path, split: str = "train") -> None:
    """Write one row per sample: flattened pixels, then label, then task_id."""
    if split not in ("train", "test"):
        raise ConfigurationError(f"split must be 'train' or 'test', got {split!r}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        width = stream.width
        writer.writerow([f"px{i}" for i in range(width)] + ["label", "task_id"])
        for task in stream.tasks:
            ds = task.train if split == "train" else task.test
            for row, label in zip(ds.inputs, ds.labels):
                writer.writerow([f"{v:.6g}" for v in row] + [int(label), task.task_id])
