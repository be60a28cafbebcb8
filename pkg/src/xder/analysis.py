"""Post-hoc probes of a finished run: loss-landscape flatness, empirical
Fisher curvature, buffer informativeness, and forward transfer.

Every probe reads a frozen model snapshot (or buffer) and never mutates
it; independent probes can run in parallel across snapshots and seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses
from .buffer import RehearsalBuffer
from .network import MLP, SGDConfig
from .streams import TaskStream
from .validation import check_features, check_labels


def _task_splits(stream: TaskStream, split: str):
    if split == "train":
        return [(t.train_x, t.train_y) for t in stream.tasks]
    if split == "test":
        return [(t.test_x, t.test_y) for t in stream.tasks]
    raise ValueError(f"unknown split {split!r}")


def sequence_loss(model: MLP, stream: TaskStream, split: str = "train") -> float:
    """Task-averaged full-softmax cross-entropy over the whole stream."""
    total = 0.0
    splits = _task_splits(stream, split)
    for x, y in splits:
        logits = model.logits(x)
        total += float(losses.full_ce(logits, y).data)
    return total / len(splits)


@dataclass
class FlatnessReport:
    """Mean perturbed loss per relative noise scale."""

    alphas: list[float]
    mean_losses: list[float]
    n_samples: int
    base_loss: float


def perturbed_mean_loss(theta: np.ndarray, loss_fn, alpha: float, n_samples: int, seed: int) -> float:
    """Monte-Carlo mean of ``loss_fn`` under scale-relative Gaussian noise.

    Each coordinate i is perturbed by Normal(0, (alpha * |theta_i|)^2).
    At alpha = 0 the unperturbed loss is returned directly with no
    sampling, so the zero point is exact.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if alpha == 0.0:
        return float(loss_fn(theta))
    rng = np.random.default_rng(seed)
    sigma = alpha * np.abs(theta)
    total = 0.0
    for _ in range(n_samples):
        total += float(loss_fn(theta + rng.normal(0.0, 1.0, theta.shape) * sigma))
    return total / n_samples


def noisy_loss(
    model: MLP,
    stream: TaskStream,
    alpha: float,
    n_samples: int,
    seed: int,
    split: str = "train",
) -> float:
    """Task-averaged cross-entropy under parameter noise of scale alpha|theta|."""
    theta = model.get_flat()
    probe = model.clone()

    def loss_fn(candidate):
        probe.set_flat(candidate)
        return sequence_loss(probe, stream, split)

    return perturbed_mean_loss(theta, loss_fn, alpha, n_samples, seed)


def flatness_report(
    model: MLP,
    stream: TaskStream,
    alphas=(0.0, 0.05, 0.1, 0.2, 0.4),
    n_samples: int = 10,
    seed: int = 0,
    split: str = "train",
) -> FlatnessReport:
    base = sequence_loss(model, stream, split)
    means = [noisy_loss(model, stream, a, n_samples, seed, split) for a in alphas]
    return FlatnessReport(list(float(a) for a in alphas), means, n_samples, base)


def fisher_trace(model: MLP, stream: TaskStream, split: str = "train") -> float:
    """Trace of the empirical Fisher information, task-averaged.

    Uses the identity trace(g g^T) = ||g||^2 per example, so the matrix is
    never materialized.
    """
    splits = _task_splits(stream, split)
    total = 0.0
    for x, y in splits:
        if x.shape[0] == 0:
            raise ValueError("empty task data")
        acc = 0.0
        for i in range(x.shape[0]):
            loss = losses.full_ce(model.forward(x[i:i + 1]), y[i:i + 1])
            grad = model.gradient(loss)
            acc += float(grad @ grad)
        total += acc / x.shape[0]
    return total / len(splits)


def offline_buffer_retrain(
    buffer: RehearsalBuffer,
    stream: TaskStream,
    mode: str = "both",
    epochs: int = 20,
    batch_size: int = 32,
    lr: float = 0.05,
    alpha: float = 1.0,
    beta: float = 1.0,
    hidden_sizes=(32, 32),
    seed: int = 0,
) -> float:
    """Train a fresh model on buffer contents only; return stream test accuracy.

    ``labels`` fits cross-entropy on stored labels, ``logits`` matches
    stored responses, ``both`` combines them (weights ``beta`` and
    ``alpha``).  The result proxies how informative the memory is.
    """
    if mode not in ("labels", "logits", "both"):
        raise ValueError(f"unknown retrain mode {mode!r}")
    if len(buffer) == 0:
        raise ValueError("buffer is empty")
    rng = np.random.default_rng(seed)
    x = buffer.stored_x
    y = buffer.stored_labels
    stored = buffer.stored_logits
    model = MLP(x.shape[1], hidden_sizes, stored.shape[1], seed=int(rng.integers(2**31)))
    opt = SGDConfig(lr)
    for _ in range(epochs):
        order = rng.permutation(x.shape[0])
        for lo in range(0, order.size, batch_size):
            idx = order[lo:lo + batch_size]
            logits = model.forward(x[idx])
            if mode == "labels":
                loss = losses.full_ce(logits, y[idx])
            elif mode == "logits":
                loss = losses.der_loss(stored[idx], logits, alpha)
            else:
                loss = losses.der_loss(stored[idx], logits, alpha) + losses.full_ce(
                    logits, y[idx]
                ) * beta
            model.sgd_step(model.gradient(loss), opt)
    test_x, test_y = stream.all_test()
    pred = np.argmax(model.logits(test_x), axis=1)
    return float(np.mean(pred == test_y))


@dataclass
class ForwardTransferCurve:
    """Few-shot accuracy of one frozen head on one not-yet-trained task."""

    source_task: int
    target_task: int
    shots: list[int]
    accuracies: list[float]
    auc: float = field(init=False)

    def __post_init__(self):
        if any(not 0.0 <= a <= 1.0 for a in self.accuracies):
            raise ValueError("accuracies must lie in [0, 1]")
        span = self.shots[-1] - self.shots[0]
        if span > 0:
            self.auc = float(np.trapezoid(self.accuracies, self.shots) / span)
        else:
            self.auc = float(np.mean(self.accuracies))


def _nearest_neighbor_accuracy(
    fit_x: np.ndarray, fit_y: np.ndarray, eval_x: np.ndarray, eval_y: np.ndarray
) -> float:
    d2 = (
        np.sum(eval_x**2, axis=1, keepdims=True)
        + np.sum(fit_x**2, axis=1)
        - 2.0 * eval_x @ fit_x.T
    )
    pred = fit_y[np.argmin(d2, axis=1)]
    return float(np.mean(pred == eval_y))


def forward_transfer(
    model: MLP,
    stream: TaskStream,
    target_task: int,
    shots: int,
    seed: int,
    eval_on_fit_set: bool = False,
) -> float:
    """Few-shot 1-NN accuracy inside the target task's own head slice.

    Fits a nearest-neighbor classifier on ``shots`` training examples per
    target class using the frozen model's logits restricted to the target
    head (Euclidean distance on the raw slice), then scores the target
    task's test split.  No parameters are updated.
    """
    task = stream.tasks[target_task]
    y_per = stream.classes_per_task
    lo, hi = target_task * y_per, (target_task + 1) * y_per
    if model.output_dim < hi:
        raise ValueError(f"model does not expose head {target_task}")
    rng = np.random.default_rng(seed)
    fit_idx = []
    for label in task.labels:
        pool = np.flatnonzero(task.train_y == label)
        if pool.size < shots:
            raise ValueError(
                f"class {label} has only {pool.size} examples for {shots} shots"
            )
        fit_idx.extend(rng.choice(pool, size=shots, replace=False))
    fit_idx = np.array(fit_idx)
    fit_feats = model.logits(task.train_x[fit_idx])[:, lo:hi]
    fit_labels = task.train_y[fit_idx]
    if eval_on_fit_set:
        eval_feats, eval_labels = fit_feats, fit_labels
    else:
        eval_feats = model.logits(task.test_x)[:, lo:hi]
        eval_labels = task.test_y
    return _nearest_neighbor_accuracy(fit_feats, fit_labels, eval_feats, eval_labels)


def transfer_curve(
    model: MLP, stream: TaskStream, source_task: int, target_task: int, shots_grid, seed: int
) -> ForwardTransferCurve:
    accs = [forward_transfer(model, stream, target_task, k, seed) for k in shots_grid]
    return ForwardTransferCurve(source_task, target_task, list(shots_grid), accs)


def transfer_auc(
    model: MLP, stream: TaskStream, source_task: int, shots_grid=(1, 2, 5, 10), seed: int = 0
) -> float:
    """Mean AUC of the transfer curves from one snapshot to every later task."""
    targets = range(source_task + 1, stream.num_tasks)
    if len(targets) == 0:
        raise ValueError("no future tasks to transfer to")
    curves = [
        transfer_curve(model, stream, source_task, t, shots_grid, seed) for t in targets
    ]
    return float(np.mean([c.auc for c in curves]))


def preallocation_sweep(stream: TaskStream, head_counts, estimator_params: dict) -> dict[int, float]:
    """Final average accuracy of the replay method per pre-allocated head count."""
    from .metrics import faa
    from .training import ContinualClassifier

    results = {}
    for k in head_counts:
        params = dict(estimator_params)
        params["preallocated_heads"] = int(k)
        clf = ContinualClassifier(**params).fit(stream)
        results[int(k)] = faa(clf.accuracy_matrix_)
    return results
