"""Manifold expansion replay: continual learning with a diameter-expanding
episodic memory and a Wasserstein feature-distillation loss."""

from .datasets import (
    LabeledDataset,
    Task,
    TaskStream,
    export_stream_csv,
    load_mnist_idx,
    permuted_stream,
    rotated_stream,
    split_stream,
    synthetic_gaussian_stream,
)
from .estimator import ContinualMlpClassifier
from .harness import (
    METHODS,
    AccuracyMatrix,
    ContinualResult,
    MethodConfig,
    acc_metric,
    advance_task,
    bwt_metric,
    evaluate,
    gem_bwt_metric,
    run_continual,
    train_task,
)
from .losses import LossResult, MaerLoss, cross_entropy, maer_loss, w2_distill
from .memory import (
    EpisodicMemory,
    ReplayBatch,
    centroid,
    diameter,
    dump_buffer_csv,
    mes_update,
    reservoir_update,
    ring_update,
    sample_batch,
)
from .nn import GradientSet, MlpModel, TeacherSnapshot, backward, forward, sgd_step, snapshot
from .validation import ConfigurationError, DimensionError, IdxFormatError

__version__ = "0.1.0"

__all__ = [
    "LabeledDataset",
    "Task",
    "TaskStream",
    "export_stream_csv",
    "load_mnist_idx",
    "permuted_stream",
    "rotated_stream",
    "split_stream",
    "synthetic_gaussian_stream",
    "ContinualMlpClassifier",
    "METHODS",
    "AccuracyMatrix",
    "ContinualResult",
    "MethodConfig",
    "acc_metric",
    "advance_task",
    "bwt_metric",
    "evaluate",
    "gem_bwt_metric",
    "run_continual",
    "train_task",
    "LossResult",
    "MaerLoss",
    "cross_entropy",
    "maer_loss",
    "w2_distill",
    "EpisodicMemory",
    "ReplayBatch",
    "centroid",
    "diameter",
    "dump_buffer_csv",
    "mes_update",
    "reservoir_update",
    "ring_update",
    "sample_batch",
    "GradientSet",
    "MlpModel",
    "TeacherSnapshot",
    "backward",
    "forward",
    "sgd_step",
    "snapshot",
    "ConfigurationError",
    "DimensionError",
    "IdxFormatError",
    "__version__",
]
