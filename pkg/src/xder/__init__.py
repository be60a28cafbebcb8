"""Class-incremental continual learning with an updatable logit-replay buffer.

The package covers the full pipeline: synthetic and file-backed task
streams, a float64 MLP with exact reverse-mode gradients, a task-balanced
rehearsal buffer whose stored logits are refreshed as new classes appear,
the composite training objective (separated cross-entropy, logit replay,
contrastive future-head preparation, activation constraints), baseline
methods, and the diagnostic suite (forgetting metrics, calibration,
secondary information, flatness, forward transfer).
"""

from .analysis import (
    FlatnessReport,
    ForwardTransferCurve,
    fisher_trace,
    flatness_report,
    forward_transfer,
    noisy_loss,
    offline_buffer_retrain,
    preallocation_sweep,
    transfer_auc,
    transfer_curve,
)
from .autodiff import Tensor, concat
from .buffer import BufferDraw, MemoryEntry, RehearsalBuffer
from .losses import (
    LossWeights,
    buffer_sce,
    der_loss,
    derpp_loss,
    full_ce,
    future_head_supcon,
    future_prep_loss,
    past_future_constraint,
    stream_sce,
    xder_loss,
)
from .metrics import (
    SuperclassMap,
    avg_logit_profile,
    consecutive_pair_superclasses,
    confidence_and_correct,
    ece,
    error_head_histogram,
    faa,
    ff,
    ss_metrics,
    stored_future_logit_mean,
)
from .network import MLP, SGDConfig, finite_difference_gradient
from .partitions import future_past_indices, partition
from .streams import (
    AugmentationPolicy,
    Task,
    TaskStream,
    augment,
    generate_blob_stream,
    load_dataset,
    save_dataset,
)
from .training import METHODS, ContinualClassifier, grad_norm_probe, new_accuracy_matrix

__version__ = "0.1.0"

__all__ = [
    "AugmentationPolicy",
    "BufferDraw",
    "ContinualClassifier",
    "FlatnessReport",
    "ForwardTransferCurve",
    "LossWeights",
    "MLP",
    "METHODS",
    "MemoryEntry",
    "RehearsalBuffer",
    "SGDConfig",
    "SuperclassMap",
    "Task",
    "TaskStream",
    "Tensor",
    "augment",
    "avg_logit_profile",
    "buffer_sce",
    "concat",
    "confidence_and_correct",
    "consecutive_pair_superclasses",
    "der_loss",
    "derpp_loss",
    "ece",
    "error_head_histogram",
    "faa",
    "ff",
    "finite_difference_gradient",
    "fisher_trace",
    "flatness_report",
    "forward_transfer",
    "full_ce",
    "future_head_supcon",
    "future_past_indices",
    "future_prep_loss",
    "generate_blob_stream",
    "grad_norm_probe",
    "load_dataset",
    "new_accuracy_matrix",
    "noisy_loss",
    "offline_buffer_retrain",
    "partition",
    "past_future_constraint",
    "preallocation_sweep",
    "save_dataset",
    "ss_metrics",
    "stored_future_logit_mean",
    "stream_sce",
    "transfer_auc",
    "transfer_curve",
    "xder_loss",
]
