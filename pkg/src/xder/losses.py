"""Differentiable loss terms for rehearsal-based class-incremental training.

Every function here is a pure map from logits (and labels) to a scalar
:class:`~xder.autodiff.Tensor`, so exact gradients flow back to whatever
produced the logits.  Cross-entropies over a restricted index range slice
the logit tensor first; gradients outside the range are therefore exact
zeros by construction, not merely small.

Batch aggregation is always the mean, which keeps the loss weights
comparable across batch sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .validation import check_labels

#: guard added to L2 norms so freshly initialized heads cannot blow up
NORM_EPS = 1e-12


@dataclass
class LossWeights:
    """Coefficients of the composite replay objective.

    Attributes:
        alpha: weight of the stored-logit matching (replay distillation) term.
        beta: weight of the buffer cross-entropy term.
        lam: weight of the future-head preparation term.
        eta: weight of the past/future activation constraint.
        margin: slack of the activation-constraint hinge.
        temperature: softmax temperature of the contrastive preparation term.
        gamma: attenuation rate of the stored-logit refresh (used by the
            buffer, carried here so one object holds every knob).
    """

    alpha: float = 0.3
    beta: float = 0.8
    lam: float = 0.05
    eta: float = 0.001
    margin: float = 0.3
    temperature: float = 5.0
    gamma: float = 0.85

    def __post_init__(self):
        for name in ("alpha", "beta", "lam", "eta", "margin"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


def _lift(logits) -> Tensor:
    return logits if isinstance(logits, Tensor) else Tensor(logits)


def _head_count(logits: Tensor, classes_per_task: int) -> int:
    dim = logits.data.shape[1]
    if dim % classes_per_task:
        raise ValueError(
            f"logit dimension {dim} is not a multiple of {classes_per_task}"
        )
    return dim // classes_per_task


def der_loss(stored_logits: np.ndarray, fresh_logits, alpha: float) -> Tensor:
    """Weighted mean squared distance between stored and fresh logit rows."""
    fresh = _lift(fresh_logits)
    stored = np.asarray(stored_logits, dtype=np.float64)
    if stored.shape != fresh.data.shape:
        raise ValueError(
            f"stored shape {stored.shape} != fresh shape {fresh.data.shape}"
        )
    diff = fresh - Tensor(stored)
    return (diff * diff).sum(axis=1).mean() * alpha


def _range_ce(logits: Tensor, y: np.ndarray, lo: int, hi: int) -> Tensor:
    """Mean cross-entropy with the softmax restricted to columns [lo, hi)."""
    if hi - lo < 1:
        raise ValueError("softmax range must contain at least one logit")
    y = check_labels(y, logits.data.shape[0])
    if np.any(y < lo) or np.any(y >= hi):
        raise ValueError(f"labels outside softmax range [{lo}, {hi})")
    sliced = logits[:, lo:hi]
    lse = sliced.logsumexp(axis=1)
    gt = sliced[np.arange(y.size), y - lo]
    return (lse - gt).mean()


def full_ce(logits, y: np.ndarray) -> Tensor:
    """Cross-entropy with the softmax spanning every exposed logit."""
    logits = _lift(logits)
    return _range_ce(logits, y, 0, logits.data.shape[1])


def stream_sce(logits, y: np.ndarray, current_task: int, classes_per_task: int) -> Tensor:
    """Cross-entropy of current-task examples over the present head only.

    Restricting the softmax this way keeps past and future logits out of
    the expression entirely, so their gradients are exactly zero.
    """
    logits = _lift(logits)
    lo = current_task * classes_per_task
    return _range_ce(logits, y, lo, lo + classes_per_task)


def buffer_sce(logits, y: np.ndarray, current_task: int, classes_per_task: int) -> Tensor:
    """Cross-entropy of replayed examples over all past heads.

    Raises:
        ValueError: when ``current_task`` is 0 (there is no past to
            classify into; callers skip this term on the first task).
    """
    if current_task < 1:
        raise ValueError("no past heads exist on the first task")
    logits = _lift(logits)
    return _range_ce(logits, y, 0, current_task * classes_per_task)


def future_head_supcon(
    logits, y: np.ndarray, head: int, classes_per_task: int, temperature: float
) -> Tensor:
    """Supervised contrastive pull on one future head's normalized responses.

    The batch is expected to hold 2N rows (N examples plus N augmented
    variants).  For each anchor with at least one positive (another row of
    the same class), the loss is the mean over positives of
    ``-log softmax`` of their pairwise similarity against all other rows;
    anchors without positives are excluded from the batch mean.
    """
    logits = _lift(logits)
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    y = check_labels(y, logits.data.shape[0])
    n = y.size
    if n < 2:
        return Tensor(0.0)
    lo = head * classes_per_task
    hi = (head + 1) * classes_per_task
    if logits.data.shape[1] < hi:
        raise ValueError(f"head {head} exceeds the exposed logit range")
    slice_ = logits[:, lo:hi]
    norm = ((slice_ * slice_).sum(axis=1, keepdims=True)) ** 0.5 + NORM_EPS
    z = slice_ / norm
    sim = (z @ z.T) * (1.0 / temperature)

    diag_mask = np.zeros((n, n))
    np.fill_diagonal(diag_mask, -np.inf)
    positives = (y[:, None] == y[None, :]) & ~np.eye(n, dtype=bool)
    pos_counts = positives.sum(axis=1)
    valid = np.flatnonzero(pos_counts > 0)
    if valid.size == 0:
        return Tensor(0.0)

    lse = (sim + Tensor(diag_mask)).logsumexp(axis=1)
    safe_counts = np.where(pos_counts > 0, pos_counts, 1)
    pos_mean = (sim * positives.astype(np.float64)).sum(axis=1) * (1.0 / safe_counts)
    per_anchor = lse - pos_mean
    return per_anchor[valid].mean()


def future_prep_loss(
    logits, y: np.ndarray, current_task: int, classes_per_task: int, temperature: float
) -> Tensor:
    """Average of the contrastive preparation term across all future heads.

    Future heads are those beyond the current task within the exposed
    logit range; with none available the loss is zero.
    """
    logits = _lift(logits)
    n_heads = _head_count(logits, classes_per_task)
    future_heads = range(current_task + 1, n_heads)
    if len(future_heads) == 0:
        return Tensor(0.0)
    total = Tensor(0.0)
    for head in future_heads:
        total = total + future_head_supcon(logits, y, head, classes_per_task, temperature)
    return total * (1.0 / len(future_heads))


def past_future_constraint(
    logits, y: np.ndarray, current_task: int, classes_per_task: int, margin: float
) -> Tensor:
    """Hinge keeping the top past and future logits under the true one.

    Each example pays ``max(0, max_past - gt + margin)`` plus the same for
    the future range; an empty range contributes nothing (first and last
    tasks have no past and no future respectively).
    """
    logits = _lift(logits)
    if margin < 0:
        raise ValueError("margin must be non-negative")
    y = check_labels(y, logits.data.shape[0])
    dim = logits.data.shape[1]
    n = y.size
    gt = logits[np.arange(n), y]
    past_hi = current_task * classes_per_task
    future_lo = (current_task + 1) * classes_per_task
    total = Tensor(np.zeros(n))
    if past_hi > 0:
        pa_max = logits[:, :past_hi].max(axis=1)
        total = total + (pa_max - gt + margin).relu()
    if future_lo < dim:
        fu_max = logits[:, future_lo:dim].max(axis=1)
        total = total + (fu_max - gt + margin).relu()
    return total.mean()


def derpp_loss(
    stream_logits,
    stream_y: np.ndarray,
    stored_logits: np.ndarray,
    buffer_logits,
    buffer_y: np.ndarray,
    alpha: float,
    beta: float,
) -> Tensor:
    """Replay objective matching both stored logits and stored labels.

    Full-softmax cross-entropy on the stream batch, plus the logit
    matching term on one replay draw, plus ``beta`` times the
    full-softmax cross-entropy on the replayed labels.  With ``beta = 0``
    this reduces to logit matching alone.
    """
    loss = full_ce(stream_logits, stream_y)
    loss = loss + der_loss(stored_logits, buffer_logits, alpha)
    if beta != 0.0:
        loss = loss + full_ce(buffer_logits, buffer_y) * beta
    return loss


def xder_loss(
    stream_logits,
    stream_y: np.ndarray,
    buffer_ce_logits,
    buffer_ce_y,
    der_stored,
    der_fresh,
    fp_logits,
    fp_y,
    pfc_logits,
    pfc_y,
    weights: LossWeights,
    current_task: int,
    classes_per_task: int,
) -> tuple[Tensor, dict[str, float]]:
    """Compose the full training objective and report each weighted term.

    Buffer-dependent arguments (``buffer_ce_*`` and ``der_*``) may be
    ``None`` while the memory is still empty; the corresponding terms are
    then dropped and reported as zero.  ``fp_logits``/``pfc_logits`` carry
    the (possibly stream-only) batches assembled for the preparation and
    constraint terms.

    Returns:
        (total, breakdown) where breakdown maps term names to their
        weighted float values and sums to the total.
    """
    terms: dict[str, float] = {}
    total = stream_sce(stream_logits, stream_y, current_task, classes_per_task)
    terms["sce_stream"] = float(total.data)

    if buffer_ce_logits is not None and weights.beta != 0.0:
        t = buffer_sce(buffer_ce_logits, buffer_ce_y, current_task, classes_per_task) * weights.beta
        terms["sce_buffer"] = float(t.data)
        total = total + t
    else:
        terms["sce_buffer"] = 0.0

    if der_stored is not None and weights.alpha != 0.0:
        t = der_loss(der_stored, der_fresh, weights.alpha)
        terms["der"] = float(t.data)
        total = total + t
    else:
        terms["der"] = 0.0

    if fp_logits is not None and weights.lam != 0.0:
        t = future_prep_loss(
            fp_logits, fp_y, current_task, classes_per_task, weights.temperature
        ) * weights.lam
        terms["fp"] = float(t.data)
        total = total + t
    else:
        terms["fp"] = 0.0

    if pfc_logits is not None and weights.eta != 0.0:
        t = past_future_constraint(
            pfc_logits, pfc_y, current_task, classes_per_task, weights.margin
        ) * weights.eta
        terms["pfc"] = float(t.data)
        total = total + t
    else:
        terms["pfc"] = 0.0

    terms["total"] = float(total.data)
    return total, terms
