"""Continual-learning loop: per-task training, teacher snapshots, post-task
memory updates, evaluation, and the ACC/BWT summary metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import LabeledDataset, TaskStream
from .losses import maer_loss
from .memory import (
    EpisodicMemory,
    mes_update,
    reservoir_update,
    ring_update,
    sample_batch,
)
from .nn import MlpModel, backward, forward, sgd_step, snapshot
from .validation import ConfigurationError

__all__ = [
    "METHODS",
    "MethodConfig",
    "AccuracyMatrix",
    "ContinualResult",
    "train_task",
    "advance_task",
    "run_continual",
    "evaluate",
    "acc_metric",
    "bwt_metric",
    "gem_bwt_metric",
]

METHODS = ("maer", "er_reservoir", "er_ring", "ce_wd", "ce_only", "finetune", "joint")

_REPLAY_METHODS = frozenset({"maer", "er_reservoir", "er_ring", "ce_wd", "ce_only"})
_DISTILL_METHODS = frozenset({"maer", "ce_wd"})


@dataclass
class MethodConfig:
    """Training configuration for one continual run."""

    method: str = "maer"
    mem_size: int = 100
    epochs: int = 10
    lr: float = 0.01
    batch_size: int = 16
    replay_batch_size: int | None = None
    seed: int = 0
    mes_mode: str = "exact"
    mes_refresh_every: int = 64
    hidden_width: int = 256

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(
                f"unknown method {self.method!r}; valid methods: {', '.join(METHODS)}"
            )
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.uses_replay and self.mem_size < 1:
            raise ConfigurationError(
                f"mem_size must be >= 1 for replay method {self.method!r}"
            )
        if self.lr < 0:
            raise ConfigurationError(f"lr must be >= 0, got {self.lr}")
        if self.mes_mode not in ("exact", "fast"):
            raise ConfigurationError(
                f"mes_mode must be 'exact' or 'fast', got {self.mes_mode!r}"
            )

    @property
    def uses_replay(self) -> bool:
        return self.method in _REPLAY_METHODS

    @property
    def uses_distill(self) -> bool:
        return self.method in _DISTILL_METHODS

    @property
    def effective_replay_batch_size(self) -> int:
        return self.replay_batch_size if self.replay_batch_size is not None else self.batch_size


class AccuracyMatrix:
    """T x T grid: entry (i, j) is test accuracy on task j after training
    task i. Entries never recorded stay NaN."""

    def __init__(self, num_tasks: int):
        if num_tasks < 1:
            raise ValueError("num_tasks must be >= 1")
        self.num_tasks = num_tasks
        self.a = np.full((num_tasks, num_tasks), np.nan)

    def record(self, after_task: int, on_task: int, accuracy: float) -> None:
        if not (0.0 <= accuracy <= 1.0):
            raise ValueError(f"accuracy must lie in [0, 1], got {accuracy}")
        self.a[after_task, on_task] = accuracy

    def entry(self, after_task: int, on_task: int) -> float:
        return float(self.a[after_task, on_task])


@dataclass
class ContinualResult:
    matrix: AccuracyMatrix
    memory: EpisodicMemory
    loss_traces: list = field(default_factory=list)


def _as_batch(ds: LabeledDataset, idx) -> tuple[np.ndarray, np.ndarray]:
    return ds.inputs[idx], ds.labels[idx]


def train_task(
    model: MlpModel,
    teacher,
    task: LabeledDataset,
    mem: EpisodicMemory,
    cfg: MethodConfig,
    rng: np.random.Generator,
    trace: list | None = None,
) -> None:
    """Train the model on one task with the method's loss terms.

    Per epoch the task is shuffled into minibatches; for replay methods each
    minibatch also draws one replay batch from the (possibly empty) memory.
    The teacher is never modified.
    """
    n = len(task)
    replay_size = cfg.effective_replay_batch_size
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            current = _as_batch(task, idx)

            replay = None
            if cfg.uses_replay and not mem.is_empty():
                batch = sample_batch(mem, replay_size, rng)
                if len(batch):
                    replay = (batch.inputs, batch.labels)

            loss = maer_loss(
                model,
                teacher if cfg.uses_distill else None,
                current,
                replay,
                replay_ce=True,
                distill=cfg.uses_distill,
            )
            grads = backward(model, current[0], loss.current_ce.logit_grad)
            if replay is not None:
                feat_grad = loss.distill.feature_grad if loss.distill else None
                grads = grads + backward(
                    model, replay[0], loss.replay_ce.logit_grad, feat_grad
                )
            sgd_step(model, grads, cfg.lr)

            if trace is not None:
                trace.append(
                    {
                        "total": loss.total,
                        "current_ce": loss.current_ce.value,
                        "replay_ce": loss.replay_ce.value if loss.replay_ce else None,
                        "distill": loss.distill.value if loss.distill else None,
                    }
                )


def _update_memory(
    model: MlpModel,
    mem: EpisodicMemory,
    task: LabeledDataset,
    cfg: MethodConfig,
    rng: np.random.Generator,
    task_id: int,
    total_tasks: int,
) -> None:
    stream = zip(task.inputs, task.labels)
    if cfg.method == "maer":
        phi = lambda x: forward(model, x)[0]
        mes_update(mem, stream, phi, rng, task_id=task_id)
    elif cfg.method in ("ce_wd", "ce_only", "er_reservoir"):
        reservoir_update(mem, stream, rng, task_id=task_id)
    elif cfg.method == "er_ring":
        quota = cfg.mem_size // total_tasks
        ring_update(mem, stream, quota, task_id=task_id)
    # finetune and joint keep the memory empty


def advance_task(
    model: MlpModel,
    mem: EpisodicMemory,
    task: LabeledDataset,
    cfg: MethodConfig,
    rng: np.random.Generator,
    task_id: int,
    tasks_seen: int,
    total_tasks: int,
    trace: list | None = None,
) -> None:
    """One step of the continual loop: snapshot, train, update memory."""
    teacher = snapshot(model) if tasks_seen > 0 else None
    train_task(model, teacher, task, mem, cfg, rng, trace=trace)
    _update_memory(model, mem, task, cfg, rng, task_id, total_tasks)


def run_continual(
    stream: TaskStream, cfg: MethodConfig, task_aware_eval: bool = False
) -> ContinualResult:
    """Run the full task sequence and fill the accuracy matrix.

    Row t holds the accuracies on test sets 1..t after finishing task t. The
    ``joint`` method instead trains once on the union of all tasks and fills
    only the last row. ``task_aware_eval`` restricts each task's evaluation
    to its own label set (intended for split streams, where the task identity
    may be granted at test time).
    """
    rng = np.random.default_rng(cfg.seed)
    num_tasks = len(stream)
    model = MlpModel(stream.width, stream.num_classes, cfg.hidden_width, rng)
    # Non-replay methods never touch the memory; keep its capacity legal even
    # when the configured mem_size is 0.
    capacity = cfg.mem_size if cfg.uses_replay else max(cfg.mem_size, 1)
    mem = EpisodicMemory(capacity, cfg.mes_mode, cfg.mes_refresh_every)
    matrix = AccuracyMatrix(num_tasks)
    traces: list[list] = []

    def task_eval(task):
        subset = np.unique(task.train.labels) if task_aware_eval else None
        return evaluate(model, task.test, subset)

    if cfg.method == "joint":
        pooled = LabeledDataset(
            np.vstack([t.train.inputs for t in stream.tasks]),
            np.concatenate([t.train.labels for t in stream.tasks]),
            stream.num_classes,
        )
        trace: list = []
        train_task(model, None, pooled, mem, cfg, rng, trace=trace)
        traces.append(trace)
        for j, task in enumerate(stream.tasks):
            matrix.record(num_tasks - 1, j, task_eval(task))
        return ContinualResult(matrix=matrix, memory=mem, loss_traces=traces)

    for t, task in enumerate(stream.tasks):
        trace = []
        advance_task(
            model, mem, task.train, cfg, rng,
            task_id=task.task_id, tasks_seen=t, total_tasks=num_tasks, trace=trace,
        )
        traces.append(trace)
        for j in range(t + 1):
            matrix.record(t, j, task_eval(stream.tasks[j]))
    return ContinualResult(matrix=matrix, memory=mem, loss_traces=traces)


def evaluate(model: MlpModel, test: LabeledDataset, class_subset=None) -> float:
    """Fraction of argmax predictions matching the labels.

    Ties break toward the lowest class index. When ``class_subset`` is given
    (task-aware evaluation for split streams), the argmax is restricted to
    those class columns.
    """
    if len(test) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    _, logits = forward(model, test.inputs)
    if class_subset is None:
        predictions = np.argmax(logits, axis=1)
    else:
        subset = np.asarray(sorted(class_subset))
        predictions = subset[np.argmax(logits[:, subset], axis=1)]
    return float(np.mean(predictions == test.labels))


def acc_metric(matrix: AccuracyMatrix) -> float:
    """Mean accuracy over all tasks after the final task (last matrix row)."""
    last = matrix.a[-1, :]
    if np.isnan(last).any():
        raise ValueError("last matrix row is not fully recorded")
    return float(last.mean())


def bwt_metric(matrix: AccuracyMatrix) -> float:
    """Forgetting-style backward transfer.

    For each task j < T, the drop from the best recorded accuracy on j over
    rows 1..T-1 to its final accuracy, averaged over j. Larger means more
    forgetting.
    """
    t = matrix.num_tasks
    if t < 2:
        raise ValueError("backward transfer needs at least 2 tasks")
    _check_lower_triangle(matrix)
    total = 0.0
    for j in range(t - 1):
        column = matrix.a[: t - 1, j]
        recorded = column[~np.isnan(column)]
        total += recorded.max() - matrix.a[t - 1, j]
    return total / (t - 1)


def gem_bwt_metric(matrix: AccuracyMatrix) -> float:
    """Conventional backward transfer: mean of final-minus-diagonal accuracy.

    Positive means later tasks improved earlier ones.
    """
    t = matrix.num_tasks
    if t < 2:
        raise ValueError("backward transfer needs at least 2 tasks")
    _check_lower_triangle(matrix)
    diffs = [matrix.a[t - 1, j] - matrix.a[j, j] for j in range(t - 1)]
    return float(np.mean(diffs))


def _check_lower_triangle(matrix: AccuracyMatrix) -> None:
    t = matrix.num_tasks
    for i in range(t):
        if np.isnan(matrix.a[i, : i + 1]).any():
            raise ValueError("lower triangle of the accuracy matrix is not fully recorded")
