"""Summary metrics and prediction-bias diagnostics.

The accuracy grid ``matrix[i, t]`` holds the accuracy on task i's test
split measured right after training task t (NaN where i > t).  The
summary metrics reduce it to a final average accuracy and a final
forgetting score; the remaining functions quantify calibration, retained
inter-class (secondary) information, and where wrong predictions land.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import check_labels


def faa(matrix: np.ndarray) -> float:
    """Final average accuracy: mean of the last column of the grid."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] < 1:
        raise ValueError("accuracy matrix must be square and non-empty")
    final = matrix[:, -1]
    if np.any(np.isnan(final)):
        raise ValueError("final column is incomplete")
    return float(np.mean(final))


def ff(matrix: np.ndarray) -> float:
    """Final forgetting: mean drop from each task's best accuracy to its last.

    For each task j < T-1 the drop is ``max_{j <= l <= T-2} a[j, l] -
    a[j, T-1]``; negative values indicate backward transfer.  Values are
    fractions in [-1, 1]; scale by 100 for display.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    t = matrix.shape[0]
    if matrix.ndim != 2 or matrix.shape[1] != t:
        raise ValueError("accuracy matrix must be square")
    if t < 2:
        raise ValueError("forgetting needs at least two tasks")
    drops = []
    for j in range(t - 1):
        history = matrix[j, j:t - 1]
        if np.any(np.isnan(history)) or np.isnan(matrix[j, t - 1]):
            raise ValueError(f"matrix rows incomplete for task {j}")
        drops.append(np.max(history) - matrix[j, t - 1])
    return float(np.mean(drops))


def ece(confidence: np.ndarray, correct: np.ndarray, n_bins: int = 10) -> float:
    """Expected calibration error over equal-width confidence bins.

    Each bin contributes its population share times the absolute gap
    between its accuracy and its mean confidence; empty bins contribute
    nothing.
    """
    confidence = np.asarray(confidence, dtype=np.float64)
    correct = np.asarray(correct, dtype=bool)
    if confidence.ndim != 1 or confidence.shape != correct.shape:
        raise ValueError("confidence and correct must be 1-d arrays of equal length")
    if np.any(confidence < 0) or np.any(confidence > 1):
        raise ValueError("confidences must lie in [0, 1]")
    if n_bins < 1:
        raise ValueError("n_bins must be positive")
    n = confidence.size
    if n == 0:
        raise ValueError("no predictions given")
    # bin b covers [b/B, (b+1)/B); confidence 1.0 falls in the last bin
    bins = np.minimum((confidence * n_bins).astype(np.int64), n_bins - 1)
    total = 0.0
    for b in range(n_bins):
        mask = bins == b
        n_b = int(mask.sum())
        if n_b == 0:
            continue
        acc = np.mean(correct[mask])
        conf = np.mean(confidence[mask])
        total += (n_b / n) * abs(acc - conf)
    return float(total)


def confidence_and_correct(logits: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Max softmax probability and correctness flags for a batch of logits."""
    logits = np.asarray(logits, dtype=np.float64)
    y = check_labels(y, logits.shape[0])
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs.max(axis=1), np.argmax(logits, axis=1) == y


@dataclass(frozen=True)
class SuperclassMap:
    """Assignment of every fine label to exactly one coarse label."""

    fine_to_coarse: np.ndarray
    n_coarse: int

    def __post_init__(self):
        mapping = np.asarray(self.fine_to_coarse)
        if mapping.ndim != 1:
            raise ValueError("fine_to_coarse must be 1-dimensional")
        if np.any(mapping < 0) or np.any(mapping >= self.n_coarse):
            raise ValueError("coarse labels out of range")
        object.__setattr__(self, "fine_to_coarse", mapping.astype(np.int64))


def consecutive_pair_superclasses(n_classes: int) -> SuperclassMap:
    """Group consecutive class pairs: fine labels 2k and 2k+1 share coarse k."""
    if n_classes < 2 or n_classes % 2:
        raise ValueError("pairing requires an even number of classes")
    return SuperclassMap(np.arange(n_classes) // 2, n_classes // 2)


def ss_metrics(logits: np.ndarray, y: np.ndarray, smap: SuperclassMap) -> tuple[float, float]:
    """Coarse-label error and NLL with each row's top logit excluded.

    Omitting the single maximum fine-class logit before the softmax leaves
    only the non-primary structure of the prediction; the remaining mass
    is then summed per coarse class.  Returns (error rate, mean NLL).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ValueError("need at least two logits per example")
    y = check_labels(y, logits.shape[0])
    if logits.shape[1] != smap.fine_to_coarse.size:
        raise ValueError("superclass map does not cover the logit range")
    n = logits.shape[0]
    masked = logits.copy()
    masked[np.arange(n), np.argmax(logits, axis=1)] = -np.inf
    shifted = masked - masked.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    coarse_probs = np.zeros((n, smap.n_coarse))
    for coarse in range(smap.n_coarse):
        members = smap.fine_to_coarse == coarse
        coarse_probs[:, coarse] = probs[:, members].sum(axis=1)
    true_coarse = smap.fine_to_coarse[y]
    err = float(np.mean(np.argmax(coarse_probs, axis=1) != true_coarse))
    nll = float(np.mean(-np.log(coarse_probs[np.arange(n), true_coarse])))
    return err, nll


def error_head_histogram(
    y_true: np.ndarray, y_pred: np.ndarray, current_task: int, classes_per_task: int
) -> np.ndarray:
    """Where misclassified old-task examples land, as per-head fractions.

    Only examples of tasks before ``current_task`` that were predicted
    wrongly are counted; the histogram spans heads 0..current_task and
    sums to one.
    """
    y_true = check_labels(y_true)
    y_pred = check_labels(y_pred, y_true.size)
    old = (y_true // classes_per_task) < current_task
    wrong = old & (y_true != y_pred)
    heads = y_pred[wrong] // classes_per_task
    heads = heads[heads <= current_task]  # errors into unseen heads are not binned
    if heads.size == 0:
        raise ValueError("no misclassified old-task examples to bin")
    counts = np.bincount(heads, minlength=current_task + 1).astype(np.float64)
    return counts / counts.sum()


def avg_logit_profile(logits: np.ndarray, y: np.ndarray, classes=None) -> np.ndarray:
    """Mean logit vector over the examples whose label is in ``classes``."""
    logits = np.asarray(logits, dtype=np.float64)
    y = check_labels(y, logits.shape[0])
    if classes is None:
        mask = np.ones(y.size, dtype=bool)
    else:
        mask = np.isin(y, np.asarray(list(classes)))
    if not np.any(mask):
        raise ValueError("class filter selects no examples")
    return logits[mask].mean(axis=0)


def stored_future_logit_mean(buffer, classes_per_task: int) -> float:
    """Mean stored logit over every head discovered after each entry's insertion.

    For each buffer entry the relevant indices start right after its
    insertion task's own head; averaging over entries summarizes how the
    memory represents classes it had not yet seen when stored.
    """
    if len(buffer) == 0:
        raise ValueError("buffer is empty")
    values = []
    logits = buffer.stored_logits
    tasks = buffer.stored_insertion_tasks
    for row, t in zip(logits, tasks):
        lo = (t + 1) * classes_per_task
        if lo < row.size:
            values.append(row[lo:].mean())
    if not values:
        raise ValueError("no entry has heads beyond its insertion task")
    return float(np.mean(values))
