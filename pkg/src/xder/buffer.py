"""Capacity-bounded rehearsal memory with task-balanced end-of-task insertion.

Each entry stores (features, label, logit vector, insertion task).  At the
end of task c, floor(capacity / (c + 1)) slots are granted to the new task:
they are freed by repeatedly evicting a random entry from whichever stored
task currently holds the most, so per-task counts never spread by more
than one, and refilled with a class-balanced draw of the finished task
paired with the model's current responses.

Stored logits of replayed entries can be refreshed in place: the current
head's fresh responses are implanted after attenuation so the implanted
maximum never exceeds gamma times the entry's stored ground-truth logit.

Serialized layout (little-endian, all fields 64-bit):
    header  int64 x 4: capacity, entry count, feature dim, logit length
    entries per record: int64 insertion_task, int64 label,
                        float64 features[d], float64 logits[logit_len]
Round-trips are bitwise exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import check_features, check_labels


@dataclass
class MemoryEntry:
    """One stored rehearsal example (a read view into the buffer arrays)."""

    x: np.ndarray
    y: int
    logits: np.ndarray
    insertion_task: int


@dataclass
class BufferDraw:
    """A sampled batch plus the storage indices needed for write-back."""

    indices: np.ndarray
    x: np.ndarray
    y: np.ndarray
    logits: np.ndarray
    insertion_tasks: np.ndarray

    def __len__(self) -> int:
        return self.indices.size


class RehearsalBuffer:
    """Bounded memory of (x, y, logits, insertion task) tuples."""

    def __init__(self, capacity: int, feature_dim: int, logit_dim: int, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.feature_dim = int(feature_dim)
        self.logit_dim = int(logit_dim)
        self._rng = np.random.default_rng(seed)
        self._x = np.zeros((capacity, feature_dim))
        self._y = np.zeros(capacity, dtype=np.int64)
        self._logits = np.zeros((capacity, logit_dim))
        self._tasks = np.zeros(capacity, dtype=np.int64)
        self._n = 0
        self.shortfall = 0  # quota not met because a task ran out of data

    def __len__(self) -> int:
        return self._n

    @property
    def is_empty(self) -> bool:
        return self._n == 0

    def entry(self, i: int) -> MemoryEntry:
        if not 0 <= i < self._n:
            raise IndexError(f"entry {i} out of range [0, {self._n})")
        return MemoryEntry(
            x=self._x[i].copy(),
            y=int(self._y[i]),
            logits=self._logits[i].copy(),
            insertion_task=int(self._tasks[i]),
        )

    @property
    def stored_logits(self) -> np.ndarray:
        return self._logits[: self._n].copy()

    @property
    def stored_labels(self) -> np.ndarray:
        return self._y[: self._n].copy()

    @property
    def stored_x(self) -> np.ndarray:
        return self._x[: self._n].copy()

    @property
    def stored_insertion_tasks(self) -> np.ndarray:
        return self._tasks[: self._n].copy()

    # -- sampling -------------------------------------------------------------

    def sample(self, n: int) -> BufferDraw:
        """Draw n entries, without replacement when n <= len(self).

        Raises:
            ValueError: on an empty buffer (callers skip replay terms).
        """
        if self._n == 0:
            raise ValueError("cannot sample from an empty buffer")
        if n < 1:
            raise ValueError("sample size must be positive")
        replace = n > self._n
        idx = self._rng.choice(self._n, size=n, replace=replace)
        return BufferDraw(
            indices=idx,
            x=self._x[idx].copy(),
            y=self._y[idx].copy(),
            logits=self._logits[idx].copy(),
            insertion_tasks=self._tasks[idx].copy(),
        )

    # -- maintenance -------------------------------------------------------------

    def per_class_counts(self) -> dict[int, int]:
        labels, counts = np.unique(self._y[: self._n], return_counts=True)
        return {int(label): int(count) for label, count in zip(labels, counts)}

    def per_task_counts(self) -> dict[int, int]:
        tasks, counts = np.unique(self._tasks[: self._n], return_counts=True)
        return {int(task): int(count) for task, count in zip(tasks, counts)}

    def _remove_at(self, i: int) -> None:
        last = self._n - 1
        if i != last:
            self._x[i] = self._x[last]
            self._y[i] = self._y[last]
            self._logits[i] = self._logits[last]
            self._tasks[i] = self._tasks[last]
        self._n = last

    def _free_slots(self, count: int) -> None:
        """Evict ``count`` entries, always from the most populated task.

        Ties break toward the oldest task, so more recent tasks keep any
        extra slots; within a task the victim is uniform at random.
        """
        for _ in range(count):
            tasks = self._tasks[: self._n]
            ids, sizes = np.unique(tasks, return_counts=True)
            victim_task = ids[np.argmax(sizes)]  # np.unique sorts: tie -> oldest
            members = np.flatnonzero(tasks == victim_task)
            self._remove_at(int(members[self._rng.integers(members.size)]))

    def _balanced_class_pick(self, y: np.ndarray, quota: int) -> np.ndarray:
        """Indices of a class-balanced draw of ``quota`` items from a task."""
        labels = np.unique(y)
        pools = {
            int(label): list(self._rng.permutation(np.flatnonzero(y == label)))
            for label in labels
        }
        base, extra = divmod(quota, labels.size)
        bonus = set(
            int(v) for v in self._rng.choice(labels, size=extra, replace=False)
        )
        picked: list[int] = []
        for label in labels:
            want = base + (1 if int(label) in bonus else 0)
            pool = pools[int(label)]
            take = min(want, len(pool))
            picked.extend(pool[:take])
            del pool[:take]
        # refill from leftover data if some class was short
        leftovers = [i for label in labels for i in pools[int(label)]]
        self._rng.shuffle(leftovers)
        while len(picked) < quota and leftovers:
            picked.append(leftovers.pop())
        return np.array(picked, dtype=np.int64)

    def end_task_insert(self, x: np.ndarray, y: np.ndarray, logits: np.ndarray, task_id: int) -> None:
        """Insert a class-balanced share of a finished task.

        ``logits`` are the model responses to pair with each candidate
        example (already computed by the caller, typically under weak
        augmentation).  The per-task quota is floor(capacity/(task_id+1));
        if the task supplies fewer examples the shortfall is recorded.
        """
        x = check_features(x, dim=self.feature_dim)
        y = check_labels(y, x.shape[0])
        logits = np.asarray(logits, dtype=np.float64)
        if logits.shape != (x.shape[0], self.logit_dim):
            raise ValueError(
                f"logits must have shape {(x.shape[0], self.logit_dim)}, got {logits.shape}"
            )
        available = x.shape[0]
        target = self.capacity // (task_id + 1)
        insert_n = min(target, available)
        self.shortfall += target - insert_n
        needed = insert_n - (self.capacity - self._n)
        if needed > 0:
            self._free_slots(needed)
        picked = self._balanced_class_pick(y, insert_n)
        for i in picked:
            slot = self._n
            self._x[slot] = x[i]
            self._y[slot] = y[i]
            self._logits[slot] = logits[i]
            self._tasks[slot] = task_id
            self._n += 1

    # -- logit refresh ---------------------------------------------------------------

    def implant_future_past(
        self,
        indices: np.ndarray,
        fresh_logits: np.ndarray,
        current_task: int,
        classes_per_task: int,
        gamma: float,
    ) -> None:
        """Write attenuated current-head responses into stored logit vectors.

        For each referenced entry inserted before ``current_task``, the
        stored logits at the current head's range are replaced by the
        fresh ones rescaled so their maximum equals
        ``min(gamma * stored_gt, fresh_max)``; entries inserted at the
        current task, or with a non-positive stored ground-truth logit or
        non-positive fresh maximum, are left untouched.  Indices outside
        the current head are never modified.
        """
        if not 0.0 <= gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        indices = np.asarray(indices)
        fresh_logits = np.asarray(fresh_logits, dtype=np.float64)
        if fresh_logits.shape[0] != indices.size:
            raise ValueError("one fresh logit row per entry index required")
        lo = current_task * classes_per_task
        hi = (current_task + 1) * classes_per_task
        if fresh_logits.shape[1] < hi:
            raise ValueError("fresh logits do not cover the current head")
        for entry_idx, fresh in zip(indices, fresh_logits):
            if self._tasks[entry_idx] >= current_task:
                continue  # present head is not future past for this entry
            stored_gt = self._logits[entry_idx, self._y[entry_idx]]
            head = fresh[lo:hi]
            fresh_max = head.max()
            if stored_gt <= 0.0 or fresh_max <= 0.0:
                continue  # attenuation ratio undefined; keep stored logits
            ceiling = gamma * stored_gt
            if ceiling >= fresh_max:
                self._logits[entry_idx, lo:hi] = head
            else:
                # dividing by the max first keeps the rescaled maximum exact
                self._logits[entry_idx, lo:hi] = (head / fresh_max) * ceiling

    def pad_logits(self, new_dim: int) -> None:
        """Extend stored logit vectors with zeros after output-head growth."""
        if new_dim < self.logit_dim:
            raise ValueError("logit dimension cannot shrink")
        if new_dim == self.logit_dim:
            return
        padded = np.zeros((self.capacity, new_dim))
        padded[:, : self.logit_dim] = self._logits
        self._logits = padded
        self.logit_dim = new_dim

    # -- serialization -----------------------------------------------------------------

    def save(self, path) -> None:
        header = np.array(
            [self.capacity, self._n, self.feature_dim, self.logit_dim], dtype="<i8"
        )
        with open(path, "wb") as fh:
            fh.write(header.tobytes())
            for i in range(self._n):
                fh.write(np.array([self._tasks[i], self._y[i]], dtype="<i8").tobytes())
                fh.write(self._x[i].astype("<f8").tobytes())
                fh.write(self._logits[i].astype("<f8").tobytes())

    @classmethod
    def load(cls, path, seed: int = 0) -> "RehearsalBuffer":
        with open(path, "rb") as fh:
            raw = fh.read()
        header = np.frombuffer(raw[:32], dtype="<i8")
        capacity, n, d, logit_dim = (int(v) for v in header)
        buf = cls(capacity, d, logit_dim, seed=seed)
        record = 16 + 8 * d + 8 * logit_dim
        expected = 32 + n * record
        if len(raw) != expected:
            raise ValueError(f"buffer file has {len(raw)} bytes, expected {expected}")
        offset = 32
        for i in range(n):
            task, label = np.frombuffer(raw[offset:offset + 16], dtype="<i8")
            offset += 16
            buf._x[i] = np.frombuffer(raw[offset:offset + 8 * d], dtype="<f8")
            offset += 8 * d
            buf._logits[i] = np.frombuffer(raw[offset:offset + 8 * logit_dim], dtype="<f8")
            offset += 8 * logit_dim
            buf._tasks[i] = task
            buf._y[i] = label
        buf._n = n
        return buf
