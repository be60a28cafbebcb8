"""Training orchestration: one estimator, nine class-incremental methods.

:class:`ContinualClassifier` follows the scikit-learn estimator protocol
(`get_params`/`set_params`, `fit`, `predict`, `score`) but fits on a
:class:`~xder.streams.TaskStream` rather than a flat (X, y) pair, since the
whole point is that tasks arrive one at a time.

Method tags:
    ft      fine-tune on each task (lower bound, no remedy for forgetting)
    jt      joint training on the union of all tasks (upper bound)
    er      experience replay of stored labels
    der     replay of stored logit responses
    derpp   replay of both logits and labels
    xder    separated cross-entropy, logit replay with stored-logit refresh,
            contrastive future-head preparation, activation constraints
    xder_no_update   xder without the stored-logit refresh
    xder_no_future   xder with grow-on-demand heads (no future terms)
    xder_ce_future   xder with future heads silenced by cross-entropy
                     instead of prepared contrastively

Per training step the replay-based methods draw from the buffer once per
loss term (never a single shared draw), then take one combined gradient
step.  At the end of each task the buffer is refreshed and re-balanced.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import losses
from .autodiff import Tensor
from .buffer import RehearsalBuffer
from .losses import LossWeights
from .network import MLP, SGDConfig
from .streams import AugmentationPolicy, TaskStream, augment
from .validation import check_features, check_labels

METHODS = (
    "ft",
    "jt",
    "er",
    "der",
    "derpp",
    "xder",
    "xder_no_update",
    "xder_no_future",
    "xder_ce_future",
)

_BUFFERED = set(METHODS) - {"ft", "jt"}
_XDER_FAMILY = {"xder", "xder_no_update", "xder_no_future", "xder_ce_future"}


def new_accuracy_matrix(num_tasks: int) -> np.ndarray:
    """(T, T) accuracy grid a[i, t], NaN where task i was unseen at time t."""
    return np.full((num_tasks, num_tasks), np.nan)


class ContinualClassifier(BaseEstimator, ClassifierMixin):
    """Class-incremental classifier trained task by task on a stream.

    Parameters mirror the training configuration: the optimizer, the loss
    weights, the rehearsal memory, the augmentation magnitudes, and the
    head pre-allocation policy (``"all"`` exposes every head up front; an
    integer ``k`` exposes k + 1 heads initially and grows one more at the
    end of each task).

    Fitted attributes (after :meth:`fit`):
        model_: the underlying :class:`~xder.network.MLP`.
        buffer_: the rehearsal memory (``None`` for ft/jt).
        accuracy_matrix_: a[i, t] grid over task boundaries.
        task_checkpoints_: list of (layer_sizes, flat parameters) per task.
        loss_trace_: list of {step, task, term, value} records.
    """

    def __init__(
        self,
        method: str = "xder",
        epochs: int = 5,
        batch_size: int = 32,
        memory_size: int = 100,
        lr: float = 0.03,
        momentum: float = 0.0,
        weight_decay: float = 0.0,
        lr_drop_epochs: tuple = (),
        alpha: float = 0.3,
        beta: float = 0.8,
        lam: float = 0.05,
        eta: float = 0.001,
        margin: float = 0.3,
        temperature: float = 5.0,
        gamma: float = 0.85,
        hidden_sizes: tuple = (32, 32),
        preallocated_heads="all",
        aug_noise: float = 0.05,
        strong_noise: float = 0.1,
        strong_mask: float = 0.25,
        strong_jitter: float = 0.2,
        log_every: int = 25,
        seed: int = 0,
    ):
        self.method = method
        self.epochs = epochs
        self.batch_size = batch_size
        self.memory_size = memory_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_drop_epochs = lr_drop_epochs
        self.alpha = alpha
        self.beta = beta
        self.lam = lam
        self.eta = eta
        self.margin = margin
        self.temperature = temperature
        self.gamma = gamma
        self.hidden_sizes = hidden_sizes
        self.preallocated_heads = preallocated_heads
        self.aug_noise = aug_noise
        self.strong_noise = strong_noise
        self.strong_mask = strong_mask
        self.strong_jitter = strong_jitter
        self.log_every = log_every
        self.seed = seed

    # -- setup -------------------------------------------------------------------

    def _validate(self, stream: TaskStream) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.method in _BUFFERED and self.memory_size < 1:
            raise ValueError(f"method {self.method!r} requires a positive memory_size")
        if self.strong_noise < self.aug_noise:
            raise ValueError("strong augmentation must be at least as large as weak")
        if self.preallocated_heads != "all":
            if self.method == "jt":
                raise ValueError("joint training requires preallocated_heads='all'")
            k = int(self.preallocated_heads)
            if k < 0 or k >= stream.num_tasks:
                raise ValueError(
                    f"preallocated_heads must be 'all' or in [0, {stream.num_tasks})"
                )

    def _weights(self) -> LossWeights:
        return LossWeights(
            alpha=self.alpha,
            beta=self.beta,
            lam=self.lam,
            eta=self.eta,
            margin=self.margin,
            temperature=self.temperature,
            gamma=self.gamma,
        )

    def _initial_output_dim(self, stream: TaskStream) -> int:
        y = stream.classes_per_task
        if self.method == "xder_no_future":
            return y
        if self.preallocated_heads == "all":
            return stream.num_tasks * y
        return (int(self.preallocated_heads) + 1) * y

    def _setup(self, stream: TaskStream) -> None:
        self._validate(stream)
        root = np.random.SeedSequence(self.seed)
        model_seed, buffer_seed, train_seed = (
            s.generate_state(1)[0] for s in root.spawn(3)
        )
        self._train_rng = np.random.default_rng(train_seed)
        self.num_tasks_ = stream.num_tasks
        self.classes_per_task_ = stream.classes_per_task
        self.n_features_in_ = stream.feature_dim
        self.classes_ = np.arange(stream.num_classes)
        self.model_ = MLP(
            stream.feature_dim,
            self.hidden_sizes,
            self._initial_output_dim(stream),
            seed=int(model_seed),
        )
        if self.method in _BUFFERED:
            self.buffer_ = RehearsalBuffer(
                self.memory_size,
                stream.feature_dim,
                self.model_.output_dim,
                seed=int(buffer_seed),
            )
        else:
            self.buffer_ = None
        self.accuracy_matrix_ = new_accuracy_matrix(stream.num_tasks)
        self.task_checkpoints_: list[tuple[tuple, np.ndarray]] = []
        self.loss_trace_: list[dict] = []
        self._weak = AugmentationPolicy("weak", noise_scale=self.aug_noise)
        self._strong = AugmentationPolicy(
            "strong",
            noise_scale=self.strong_noise,
            mask_fraction=self.strong_mask,
            scale_jitter=self.strong_jitter,
        )
        self._step = 0
        self._next_task = 0

    # -- public estimator api --------------------------------------------------------

    def fit(self, stream: TaskStream):
        """Run the full task sequence (or the joint upper bound) and return self."""
        self._setup(stream)
        if self.method == "jt":
            self._fit_joint(stream)
            return self
        for c in range(stream.num_tasks):
            self.partial_fit(stream, task=c)
        return self

    def partial_fit(self, stream: TaskStream, task: int):
        """Train on one task (tasks must arrive in order 0, 1, ...)."""
        if self.method == "jt":
            raise ValueError("joint training has no incremental mode; call fit()")
        if not hasattr(self, "model_"):
            self._setup(stream)
        if task != self._next_task:
            raise ValueError(
                f"tasks must be trained in order: expected {self._next_task}, got {task}"
            )
        self._train_task(stream, task)
        self._next_task += 1
        self._evaluate_boundary(stream, task)
        self.task_checkpoints_.append(
            (self.model_.layer_sizes, self.model_.get_flat())
        )
        return self

    def predict_logits(self, x) -> np.ndarray:
        x = check_features(x, dim=self.n_features_in_)
        return self.model_.logits(x)

    def predict(self, x) -> np.ndarray:
        """Argmax over every currently exposed logit (single-head protocol)."""
        return np.argmax(self.predict_logits(x), axis=1)

    # -- joint upper bound --------------------------------------------------------------

    def _fit_joint(self, stream: TaskStream) -> None:
        x_all, y_all = stream.all_train()
        opt = SGDConfig(self.lr, self.momentum, self.weight_decay)
        for epoch in range(self.epochs):
            opt = self._maybe_drop_lr(opt, epoch)
            for bx, by in self._batches(x_all, y_all):
                logits = self.model_.forward(self._aug(bx, self._weak))
                loss = losses.full_ce(logits, by)
                self._log({"total": float(loss.data)}, task=-1)
                self.model_.sgd_step(self.model_.gradient(loss), opt)
                self._step += 1
        final = stream.num_tasks - 1
        for i, task in enumerate(stream.tasks):
            self.accuracy_matrix_[i, final] = self._accuracy(task.test_x, task.test_y)
        self.task_checkpoints_.append((self.model_.layer_sizes, self.model_.get_flat()))

    # -- sequential training ---------------------------------------------------------------

    def _train_task(self, stream: TaskStream, c: int) -> None:
        task = stream.tasks[c]
        y = stream.classes_per_task
        if self.method == "xder_no_future":
            self._ensure_heads((c + 1) * y)
        opt = SGDConfig(self.lr, self.momentum, self.weight_decay)
        for epoch in range(self.epochs):
            opt = self._maybe_drop_lr(opt, epoch)
            for bx, by in self._batches(task.train_x, task.train_y):
                loss, terms = self._step_loss(bx, by, c)
                self._log(terms, task=c)
                self.model_.sgd_step(self.model_.gradient(loss), opt)
                self._step += 1
        if self.method in _XDER_FAMILY and self.method != "xder_no_update":
            self._end_task_implant(c)
        if self.buffer_ is not None:
            logits = self.model_.logits(self._aug(task.train_x, self._weak))
            self.buffer_.end_task_insert(task.train_x, task.train_y, logits, c)
        if self.preallocated_heads != "all" and self.method != "xder_no_future":
            self._grow_one_head_if_needed()

    def _step_loss(self, bx: np.ndarray, by: np.ndarray, c: int):
        """Assemble the method's objective for one stream batch."""
        method = self.method
        stream_logits = self.model_.forward(self._aug(bx, self._weak))
        can_replay = self.buffer_ is not None and not self.buffer_.is_empty

        if method == "ft":
            loss = losses.full_ce(stream_logits, by)
            return loss, {"total": float(loss.data)}

        if method == "er":
            loss = losses.full_ce(stream_logits, by)
            if can_replay:
                draw = self.buffer_.sample(self.batch_size)
                replay_logits = self.model_.forward(self._aug(draw.x, self._weak))
                loss = loss + losses.full_ce(replay_logits, draw.y)
            return loss, {"total": float(loss.data)}

        if method in ("der", "derpp"):
            loss = losses.full_ce(stream_logits, by)
            terms = {"ce_stream": float(loss.data), "der": 0.0, "ce_buffer": 0.0}
            if can_replay:
                draw = self.buffer_.sample(self.batch_size)
                fresh = self.model_.forward(self._aug(draw.x, self._weak))
                t = losses.der_loss(draw.logits, fresh, self.alpha)
                terms["der"] = float(t.data)
                loss = loss + t
                if method == "derpp":
                    draw2 = self.buffer_.sample(self.batch_size)
                    fresh2 = self.model_.forward(self._aug(draw2.x, self._weak))
                    t2 = losses.full_ce(fresh2, draw2.y) * self.beta
                    terms["ce_buffer"] = float(t2.data)
                    loss = loss + t2
            terms["total"] = float(loss.data)
            return loss, terms

        return self._xder_step_loss(stream_logits, bx, by, c)

    def _xder_step_loss(self, stream_logits: Tensor, bx, by, c: int):
        y = self.classes_per_task_
        weights = self._weights()
        implant = self.method != "xder_no_update"
        can_replay = self.buffer_ is not None and not self.buffer_.is_empty

        buffer_ce_logits = buffer_ce_y = None
        der_stored = der_fresh = None
        if can_replay and c > 0:
            draw = self.buffer_.sample(self.batch_size)
            buffer_ce_logits = self.model_.forward(self._aug(draw.x, self._weak))
            buffer_ce_y = draw.y
            if implant:
                self.buffer_.implant_future_past(
                    draw.indices, buffer_ce_logits.data, c, y, self.gamma
                )
        if can_replay:
            draw = self.buffer_.sample(self.batch_size)
            der_fresh = self.model_.forward(self._aug(draw.x, self._weak))
            der_stored = draw.logits
            if implant:
                self.buffer_.implant_future_past(
                    draw.indices, der_fresh.data, c, y, self.gamma
                )

        fp_logits = fp_y = None
        has_future = self.model_.output_dim > (c + 1) * y
        if self.method == "xder" and self.lam != 0.0 and has_future:
            fx, fy = bx, by
            if can_replay:
                draw = self.buffer_.sample(self.batch_size)
                fx = np.concatenate([fx, draw.x])
                fy = np.concatenate([fy, draw.y])
            doubled = np.concatenate(
                [self._aug(fx, self._strong), self._aug(fx, self._strong)]
            )
            fp_logits = self.model_.forward(doubled)
            fp_y = np.concatenate([fy, fy])

        px, py = bx, by
        if can_replay:
            draw = self.buffer_.sample(self.batch_size)
            px = np.concatenate([px, draw.x])
            py = np.concatenate([py, draw.y])
        pfc_logits = self.model_.forward(self._aug(px, self._weak))

        if self.method == "xder_ce_future":
            # future heads take part in the stream softmax, so their
            # post-softmax targets are zero and they are pushed down
            total, terms = self._ce_future_compose(
                stream_logits, by, buffer_ce_logits, buffer_ce_y,
                der_stored, der_fresh, pfc_logits, py, weights, c,
            )
            return total, terms
        total, terms = losses.xder_loss(
            stream_logits, by,
            buffer_ce_logits, buffer_ce_y,
            der_stored, der_fresh,
            fp_logits, fp_y,
            pfc_logits, py,
            weights, c, y,
        )
        return total, terms

    def _ce_future_compose(
        self, stream_logits, by, buf_logits, buf_y, der_stored, der_fresh,
        pfc_logits, pfc_y, weights, c,
    ):
        y = self.classes_per_task_
        dim = stream_logits.data.shape[1]
        total = losses._range_ce(stream_logits, by, c * y, dim)
        terms = {"sce_stream": float(total.data), "sce_buffer": 0.0, "der": 0.0, "fp": 0.0}
        if buf_logits is not None and weights.beta != 0.0:
            t = losses.buffer_sce(buf_logits, buf_y, c, y) * weights.beta
            terms["sce_buffer"] = float(t.data)
            total = total + t
        if der_stored is not None and weights.alpha != 0.0:
            t = losses.der_loss(der_stored, der_fresh, weights.alpha)
            terms["der"] = float(t.data)
            total = total + t
        if weights.eta != 0.0:
            t = losses.past_future_constraint(pfc_logits, pfc_y, c, y, weights.margin) * weights.eta
            terms["pfc"] = float(t.data)
            total = total + t
        else:
            terms["pfc"] = 0.0
        terms["total"] = float(total.data)
        return total, terms

    # -- task-boundary maintenance ------------------------------------------------------

    def _end_task_implant(self, c: int) -> None:
        """Refresh every eligible stored entry with current-head responses."""
        buf = self.buffer_
        if buf is None or buf.is_empty:
            return
        n = len(buf)
        fresh = self.model_.logits(self._aug(buf.stored_x, self._weak))
        buf.implant_future_past(
            np.arange(n), fresh, c, self.classes_per_task_, self.gamma
        )

    def _ensure_heads(self, needed: int) -> None:
        if self.model_.output_dim < needed:
            self.model_.grow_head(needed - self.model_.output_dim)
            if self.buffer_ is not None:
                self.buffer_.pad_logits(self.model_.output_dim)

    def _grow_one_head_if_needed(self) -> None:
        full = self.num_tasks_ * self.classes_per_task_
        if self.model_.output_dim < full:
            self._ensure_heads(
                min(full, self.model_.output_dim + self.classes_per_task_)
            )

    def _evaluate_boundary(self, stream: TaskStream, c: int) -> None:
        for i in range(c + 1):
            task = stream.tasks[i]
            self.accuracy_matrix_[i, c] = self._accuracy(task.test_x, task.test_y)

    def _accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        pred = np.argmax(self.model_.logits(x), axis=1)
        return float(np.mean(pred == y))

    # -- small helpers -------------------------------------------------------------------

    def _aug(self, x: np.ndarray, policy: AugmentationPolicy) -> np.ndarray:
        return augment(x, policy, int(self._train_rng.integers(2**63)))

    def _batches(self, x: np.ndarray, y: np.ndarray):
        order = self._train_rng.permutation(x.shape[0])
        for lo in range(0, order.size, self.batch_size):
            idx = order[lo:lo + self.batch_size]
            yield x[idx], y[idx]

    def _maybe_drop_lr(self, opt: SGDConfig, epoch: int) -> SGDConfig:
        if epoch in tuple(self.lr_drop_epochs):
            return SGDConfig(opt.lr / 10.0, opt.momentum, opt.weight_decay)
        return opt

    def _log(self, terms: dict[str, float], task: int) -> None:
        if self.log_every and self._step % self.log_every == 0:
            for name, value in terms.items():
                self.loss_trace_.append(
                    {"step": self._step, "task": task, "term": name, "value": value}
                )


def grad_norm_probe(model: MLP, stream_x, stream_y, buffer_x, buffer_y) -> tuple[float, float]:
    """L2 norms of the cross-entropy gradients of a stream and a buffer batch.

    Both gradients are taken at the same parameters, so the pair exposes
    how strongly fresh examples outweigh replayed ones.
    """
    stream_x = check_features(stream_x)
    buffer_x = check_features(buffer_x)
    stream_y = check_labels(stream_y, stream_x.shape[0])
    buffer_y = check_labels(buffer_y, buffer_x.shape[0])
    g_stream = model.gradient(losses.full_ce(model.forward(stream_x), stream_y))
    g_buffer = model.gradient(losses.full_ce(model.forward(buffer_x), buffer_y))
    return float(np.linalg.norm(g_stream)), float(np.linalg.norm(g_buffer))
