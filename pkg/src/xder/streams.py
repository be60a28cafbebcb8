"""Class-incremental task streams over labeled feature vectors.

A stream is an ordered list of tasks with disjoint global label ranges:
task i owns classes [i*Y, (i+1)*Y).  Streams come from two sources: a
synthetic generator that drops isotropic Gaussian blobs at mutually
separated means, and a loader for a plain-text labeled-vector format.
Both are fully determined by their seed.

Dataset file format (UTF-8, LF):
    header line   ``d=<int> n=<int> classes=<int>``
    record lines  ``<label:int> <f_1:float> ... <f_d:float>``
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import check_features, check_labels

#: fraction of each class generated/held out as the task's test split
TEST_FRACTION = 0.2

#: attempts to place each class mean before giving up on the geometry
_PLACEMENT_ATTEMPTS = 500


@dataclass(frozen=True)
class Task:
    """One task: a contiguous block of classes with train and test splits."""

    task_id: int
    labels: range
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    def __post_init__(self):
        for arr in (self.train_x, self.train_y, self.test_x, self.test_y):
            arr.flags.writeable = False
        bad = [y for y in self.train_y if y not in self.labels]
        bad += [y for y in self.test_y if y not in self.labels]
        if bad:
            raise ValueError(f"labels {sorted(set(bad))} outside task range {self.labels}")


@dataclass(frozen=True)
class TaskStream:
    """Ordered sequence of tasks with disjoint labels; immutable once built."""

    num_tasks: int
    classes_per_task: int
    feature_dim: int
    tasks: list[Task] = field(repr=False)

    @property
    def num_classes(self) -> int:
        return self.num_tasks * self.classes_per_task

    def all_train(self) -> tuple[np.ndarray, np.ndarray]:
        """Union of every task's train split (joint-training view)."""
        x = np.concatenate([t.train_x for t in self.tasks])
        y = np.concatenate([t.train_y for t in self.tasks])
        return x, y

    def all_test(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.concatenate([t.test_x for t in self.tasks])
        y = np.concatenate([t.test_y for t in self.tasks])
        return x, y


@dataclass(frozen=True)
class AugmentationPolicy:
    """Perturbation recipe for vector data.

    ``none`` is the identity.  ``weak`` adds Gaussian noise of scale
    ``noise_scale``.  ``strong`` additionally zeroes a ``mask_fraction``
    of coordinates per example and rescales each example by a factor
    drawn from [1 - scale_jitter, 1 + scale_jitter].
    """

    mode: str = "none"
    noise_scale: float = 0.0
    mask_fraction: float = 0.0
    scale_jitter: float = 0.0

    def __post_init__(self):
        if self.mode not in ("none", "weak", "strong"):
            raise ValueError(f"unknown augmentation mode {self.mode!r}")
        if self.noise_scale < 0 or self.scale_jitter < 0:
            raise ValueError("noise_scale and scale_jitter must be non-negative")
        if not 0.0 <= self.mask_fraction <= 1.0:
            raise ValueError("mask_fraction must lie in [0, 1]")


def _place_means(n_classes: int, dim: int, separation: float, rng) -> np.ndarray:
    """Sequentially place class means at pairwise distance >= separation.

    Means live in the fixed box [-1.5*separation, 1.5*separation]^dim, so
    the separation knob controls crowding directly and a dimension too
    small for the requested class count genuinely cannot be packed.
    """
    half_width = 1.5 * separation
    means = np.empty((n_classes, dim))
    for k in range(n_classes):
        for _ in range(_PLACEMENT_ATTEMPTS):
            candidate = rng.uniform(-half_width, half_width, size=dim)
            if k == 0 or np.min(np.linalg.norm(means[:k] - candidate, axis=1)) >= separation:
                means[k] = candidate
                break
        else:
            raise ValueError(
                f"dimension {dim} too small to place {n_classes} class means "
                f"at separation {separation}"
            )
    return means


def generate_blob_stream(
    num_tasks: int,
    classes_per_task: int,
    n_per_class: int,
    dim: int,
    separation: float,
    seed: int,
) -> TaskStream:
    """Synthetic stream of isotropic unit-variance Gaussian class blobs.

    ``n_per_class`` counts training examples; each class additionally gets
    ``round(TEST_FRACTION * n_per_class)`` held-out test examples.  The
    same arguments and seed reproduce the stream bit for bit.
    """
    if num_tasks < 1 or classes_per_task < 1:
        raise ValueError("num_tasks and classes_per_task must be positive")
    if n_per_class < 1:
        raise ValueError("n_per_class must be positive")
    if dim < 2:
        raise ValueError("dim must be at least 2")
    if separation < 0:
        raise ValueError("separation must be non-negative")
    rng = np.random.default_rng(seed)
    n_classes = num_tasks * classes_per_task
    means = _place_means(n_classes, dim, separation, rng)
    n_test = int(round(TEST_FRACTION * n_per_class))
    tasks = []
    for t in range(num_tasks):
        labels = range(t * classes_per_task, (t + 1) * classes_per_task)
        xs, ys, txs, tys = [], [], [], []
        for label in labels:
            pts = means[label] + rng.normal(size=(n_per_class + n_test, dim))
            xs.append(pts[:n_per_class])
            ys.append(np.full(n_per_class, label, dtype=np.int64))
            txs.append(pts[n_per_class:])
            tys.append(np.full(n_test, label, dtype=np.int64))
        train_x = np.concatenate(xs)
        train_y = np.concatenate(ys)
        order = rng.permutation(train_x.shape[0])
        tasks.append(
            Task(
                task_id=t,
                labels=labels,
                train_x=train_x[order],
                train_y=train_y[order],
                test_x=np.concatenate(txs),
                test_y=np.concatenate(tys),
            )
        )
    return TaskStream(num_tasks, classes_per_task, dim, tasks)


def save_dataset(path, x: np.ndarray, y: np.ndarray) -> None:
    """Write labeled vectors in the documented plain-text format."""
    x = check_features(x)
    y = check_labels(y, x.shape[0])
    classes = np.unique(y).size
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"d={x.shape[1]} n={x.shape[0]} classes={classes}\n")
        for label, row in zip(y, x):
            fh.write(f"{int(label)} " + " ".join(repr(float(v)) for v in row) + "\n")


def _parse_header(line: str) -> dict[str, int]:
    fields = {}
    for token in line.split():
        if "=" not in token:
            raise ValueError(f"malformed header token {token!r}")
        key, value = token.split("=", 1)
        fields[key] = int(value)
    for key in ("d", "n", "classes"):
        if key not in fields:
            raise ValueError(f"header missing field {key!r}")
    return fields


def load_dataset(path, num_tasks: int, classes_per_task: int, split_seed: int) -> TaskStream:
    """Split a labeled-vector file into a class-incremental stream.

    Original classes are shuffled by ``split_seed``, partitioned into
    ``num_tasks`` groups of ``classes_per_task``, and relabeled to the
    canonical 0..T*Y-1 range.  A TEST_FRACTION share of each class is
    carved out (seed-deterministically) as the task's test split.
    """
    if num_tasks < 1 or classes_per_task < 1:
        raise ValueError("num_tasks and classes_per_task must be positive")
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    header = _parse_header(lines[0])
    dim, n = header["d"], header["n"]
    if len(lines) - 1 != n:
        raise ValueError(f"{path}: header says n={n} but found {len(lines) - 1} records")
    x = np.empty((n, dim))
    y = np.empty(n, dtype=np.int64)
    for i, line in enumerate(lines[1:]):
        parts = line.split()
        if len(parts) != dim + 1:
            raise ValueError(f"{path}: record {i} has {len(parts) - 1} features, expected {dim}")
        y[i] = int(parts[0])
        x[i] = [float(v) for v in parts[1:]]
    original = np.unique(y)
    if original.size != header["classes"]:
        raise ValueError(
            f"{path}: header says classes={header['classes']} "
            f"but found {original.size} distinct labels"
        )
    if original.size != num_tasks * classes_per_task:
        raise ValueError(
            f"{original.size} classes cannot be split into "
            f"{num_tasks} tasks of {classes_per_task}"
        )
    rng = np.random.default_rng(split_seed)
    permuted = original[rng.permutation(original.size)]
    relabel = {int(old): new for new, old in enumerate(permuted)}
    y = np.array([relabel[int(v)] for v in y], dtype=np.int64)

    tasks = []
    for t in range(num_tasks):
        labels = range(t * classes_per_task, (t + 1) * classes_per_task)
        train_parts, test_parts = [], []
        for label in labels:
            idx = np.flatnonzero(y == label)
            idx = idx[rng.permutation(idx.size)]
            n_test = int(round(TEST_FRACTION * idx.size))
            test_parts.append(idx[:n_test])
            train_parts.append(idx[n_test:])
        train_idx = np.concatenate(train_parts)
        train_idx = train_idx[rng.permutation(train_idx.size)]
        test_idx = np.concatenate(test_parts)
        tasks.append(
            Task(
                task_id=t,
                labels=labels,
                train_x=x[train_idx].copy(),
                train_y=y[train_idx].copy(),
                test_x=x[test_idx].copy(),
                test_y=y[test_idx].copy(),
            )
        )
    return TaskStream(num_tasks, classes_per_task, dim, tasks)


def augment(x: np.ndarray, policy: AugmentationPolicy, seed: int) -> np.ndarray:
    """Apply a perturbation policy to a batch; deterministic given the seed.

    Sub-operations whose parameter is zero are skipped outright, so a
    policy with all-zero magnitudes is the exact identity in every mode.
    """
    x = check_features(x)
    if policy.mode == "none":
        return x.copy()
    rng = np.random.default_rng(seed)
    out = x.copy()
    if policy.noise_scale > 0.0:
        out = out + rng.normal(0.0, policy.noise_scale, size=out.shape)
    if policy.mode == "strong":
        n, dim = out.shape
        n_masked = int(round(policy.mask_fraction * dim))
        if n_masked > 0:
            for i in range(n):
                out[i, rng.choice(dim, size=n_masked, replace=False)] = 0.0
        if policy.scale_jitter > 0.0:
            scales = rng.uniform(
                1.0 - policy.scale_jitter, 1.0 + policy.scale_jitter, size=(n, 1)
            )
            out = out * scales
    return out
