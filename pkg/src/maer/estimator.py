"""Scikit-learn style estimator facade over the continual training loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .datasets import LabeledDataset
from .harness import MethodConfig, advance_task, evaluate
from .memory import EpisodicMemory
from .nn import MlpModel, forward
from .validation import (
    ConfigurationError,
    as_float_matrix,
    as_label_vector,
    check_width,
)

__all__ = ["ContinualMlpClassifier"]


class ContinualMlpClassifier(BaseEstimator, ClassifierMixin):
    """MLP classifier trained sequentially with episodic replay.

    Each ``partial_fit`` call is treated as the next task of a continual
    stream: the current model is snapshotted as the frozen teacher, the task
    is trained with the method's loss terms, and the task's samples are
    streamed into the episodic memory under the method's policy. ``fit``
    resets all state and learns its data as a single task.

    Parameters
    ----------
    method : one of "maer", "er_reservoir", "er_ring", "ce_wd", "ce_only",
        "finetune". The stream-level "joint" baseline is expressed by calling
        ``fit`` on pooled data instead.
    num_tasks : total number of tasks the stream will contain; required by
        the er_ring policy to size its per-task segments.
    """

    def __init__(
        self,
        method: str = "maer",
        mem_size: int = 100,
        epochs: int = 10,
        lr: float = 0.01,
        batch_size: int = 16,
        replay_batch_size: int | None = None,
        hidden_width: int = 256,
        mes_mode: str = "exact",
        mes_refresh_every: int = 64,
        num_tasks: int | None = None,
        seed: int = 0,
    ):
        self.method = method
        self.mem_size = mem_size
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.replay_batch_size = replay_batch_size
        self.hidden_width = hidden_width
        self.mes_mode = mes_mode
        self.mes_refresh_every = mes_refresh_every
        self.num_tasks = num_tasks
        self.seed = seed

    def _config(self) -> MethodConfig:
        if self.method == "joint":
            raise ConfigurationError(
                "method 'joint' is a stream-level baseline; pool the tasks and "
                "call fit instead"
            )
        return MethodConfig(
            method=self.method,
            mem_size=self.mem_size,
            epochs=self.epochs,
            lr=self.lr,
            batch_size=self.batch_size,
            replay_batch_size=self.replay_batch_size,
            seed=self.seed,
            mes_mode=self.mes_mode,
            mes_refresh_every=self.mes_refresh_every,
            hidden_width=self.hidden_width,
        )

    def _validate_input(self, X, y):
        X = as_float_matrix(X, "X")
        y = as_label_vector(y, "y")
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        return X, y

    def partial_fit(self, X, y, classes=None):
        """Learn ``(X, y)`` as the next task in the stream."""
        X, y = self._validate_input(X, y)
        cfg = self._config()

        if not hasattr(self, "model_"):
            if classes is None:
                classes = np.unique(y)
            self.classes_ = np.asarray(classes)
            self.rng_ = np.random.default_rng(self.seed)
            self.model_ = MlpModel(
                X.shape[1], len(self.classes_), self.hidden_width, self.rng_
            )
            self.memory_ = EpisodicMemory(
                self.mem_size, self.mes_mode, self.mes_refresh_every
            )
            self.tasks_seen_ = 0
        else:
            check_width(X, self.model_.input_dim, "X")

        y_idx = np.searchsorted(self.classes_, y)
        if (y_idx >= len(self.classes_)).any() or (self.classes_[y_idx] != y).any():
            raise ValueError("y contains labels outside the declared classes")

        if self.method == "er_ring":
            if self.num_tasks is None:
                raise ConfigurationError(
                    "er_ring needs num_tasks to size its per-task segments"
                )
            total_tasks = self.num_tasks
        else:
            total_tasks = self.num_tasks if self.num_tasks is not None else self.tasks_seen_ + 1

        task = LabeledDataset(X, y_idx, len(self.classes_))
        advance_task(
            self.model_, self.memory_, task, cfg, self.rng_,
            task_id=self.tasks_seen_, tasks_seen=self.tasks_seen_,
            total_tasks=total_tasks,
        )
        self.tasks_seen_ += 1
        return self

    def fit(self, X, y):
        """Reset all state and learn ``(X, y)`` as a single task."""
        for attr in ("model_", "memory_", "rng_", "classes_", "tasks_seen_"):
            if hasattr(self, attr):
                delattr(self, attr)
        return self.partial_fit(X, y)

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ConfigurationError("estimator is not fitted; call fit or partial_fit")

    def decision_function(self, X) -> np.ndarray:
        self._check_fitted()
        X = as_float_matrix(X, "X")
        check_width(X, self.model_.input_dim, "X")
        _, logits = forward(self.model_, X)
        return logits

    def predict(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        return self.classes_[np.argmax(logits, axis=1)]

    def predict_proba(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def transform(self, X) -> np.ndarray:
        """Feature-extractor outputs, for composing with downstream models."""
        self._check_fitted()
        X = as_float_matrix(X, "X")
        check_width(X, self.model_.input_dim, "X")
        features, _ = forward(self.model_, X)
        return features

    def score_dataset(self, ds: LabeledDataset) -> float:
        self._check_fitted()
        return evaluate(self.model_, ds)
