"""Index arithmetic over the flat logit vector of a class-incremental classifier.

The output space of a model trained on ``num_tasks`` tasks of
``classes_per_task`` classes each is a flat vector of
``num_tasks * classes_per_task`` logits.  Relative to the task currently
being learned, that vector splits into three contiguous, disjoint ranges:
classes already seen (past), classes being learned (present), and classes
not yet seen (future).  For an entry stored in the rehearsal buffer there
is a fourth notion: the heads of tasks discovered after the entry was
inserted (its "future past").

All ranges are half-open and zero-based.
"""

from __future__ import annotations


def partition(current_task: int, num_tasks: int, classes_per_task: int) -> tuple[range, range, range]:
    """Split the flat logit index space into (past, present, future) ranges.

    Args:
        current_task: index of the task being learned, in [0, num_tasks).
        num_tasks: total number of tasks.
        classes_per_task: classes owned by each task.

    Returns:
        Three ``range`` objects: past = [0, c*Y), present = [c*Y, (c+1)*Y),
        future = [(c+1)*Y, T*Y).  Past is empty iff c == 0, future is empty
        iff c == num_tasks - 1.
    """
    if num_tasks < 1 or classes_per_task < 1:
        raise ValueError("num_tasks and classes_per_task must be positive")
    if not 0 <= current_task < num_tasks:
        raise ValueError(
            f"current_task {current_task} out of range [0, {num_tasks})"
        )
    y = classes_per_task
    c = current_task
    return (
        range(0, c * y),
        range(c * y, (c + 1) * y),
        range((c + 1) * y, num_tasks * y),
    )


def future_past_indices(head: int, insertion_task: int, current_task: int, classes_per_task: int) -> range:
    """Logit range of one head discovered after a buffer entry was stored.

    For an entry inserted at ``insertion_task``, the heads with index
    ``head`` in (insertion_task, current_task] model classes the network
    first saw after the entry entered the buffer.

    Args:
        head: task index of the head being queried.
        insertion_task: task at which the entry was inserted.
        current_task: task currently being learned.
        classes_per_task: classes owned by each task.

    Returns:
        ``range(head * Y, (head + 1) * Y)``.

    Raises:
        ValueError: if ``head <= insertion_task`` or ``head > current_task``
            (the head is not a future-past head for this entry).
    """
    if classes_per_task < 1:
        raise ValueError("classes_per_task must be positive")
    if head <= insertion_task:
        raise ValueError(
            f"head {head} must exceed insertion task {insertion_task}"
        )
    if head > current_task:
        raise ValueError(
            f"head {head} not yet observed at current task {current_task}"
        )
    y = classes_per_task
    return range(head * y, (head + 1) * y)
