"""Loss functions: cross-entropy, paired-feature W2 distillation, and the
combined replay objective.

Each function returns its value together with the upstream gradients needed
by ``nn.backward``; none of them mutate the model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import MlpModel, forward
from .validation import (
    ConfigurationError,
    as_float_matrix,
    as_label_vector,
    check_labels_in_range,
    check_same_shape,
)

__all__ = ["LossResult", "MaerLoss", "cross_entropy", "w2_distill", "maer_loss"]


@dataclass
class LossResult:
    """Scalar loss value plus the gradients w.r.t. its direct inputs."""

    value: float
    logit_grad: np.ndarray | None = None
    feature_grad: np.ndarray | None = None


def cross_entropy(logits, labels) -> LossResult:
    """Mean negative log-softmax of the true class.

    Softmax is computed with max-subtraction, so saturated logits do not
    overflow. ``logit_grad`` is ``(softmax - one_hot) / n``.
    """
    z = as_float_matrix(logits, "logits")
    y = as_label_vector(labels, "labels")
    n, c = z.shape
    if y.shape[0] != n:
        raise ValueError(f"labels has length {y.shape[0]}, expected {n}")
    check_labels_in_range(y, c)

    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    value = float(-log_probs[np.arange(n), y].mean())

    grad = np.exp(log_probs)
    grad[np.arange(n), y] -= 1.0
    grad /= n
    return LossResult(value=value, logit_grad=grad)


def w2_distill(student_feat, teacher_feat) -> LossResult:
    """Index-paired W2 mismatch between student and teacher features.

    ``value = sqrt(mean_i ||s_i - t_i||^2)`` with Euclidean row distances.
    The gradient flows to the student only; at value 0 the subgradient is
    taken as zero.
    """
    s = as_float_matrix(student_feat, "student_feat")
    t = as_float_matrix(teacher_feat, "teacher_feat")
    check_same_shape(s, t, "student_feat", "teacher_feat")
    n = s.shape[0]
    if n < 1:
        raise ValueError("feature matrices must have at least one row")

    diff = s - t
    value = float(np.sqrt(np.sum(diff * diff) / n))
    if value > 0.0:
        grad = diff / (n * value)
    else:
        grad = np.zeros_like(diff)
    return LossResult(value=value, feature_grad=grad)


@dataclass
class MaerLoss:
    """Per-term breakdown of the combined objective for one step."""

    total: float
    current_ce: LossResult
    replay_ce: LossResult | None = None
    distill: LossResult | None = None


def maer_loss(
    model: MlpModel,
    teacher: MlpModel | None,
    current_batch,
    replay_batch=None,
    *,
    replay_ce: bool = True,
    distill: bool = True,
) -> MaerLoss:
    """Combined objective: CE on the current batch, plus CE and feature
    distillation on the replay batch when one is present.

    ``current_batch`` and ``replay_batch`` are ``(inputs, labels)`` pairs.
    The ablation flags drop the replay-CE or distillation term; with both on
    (the default) this is the full replay objective. A replay batch with the
    distillation term active requires a teacher.
    """
    cur_x, cur_y = current_batch
    _, cur_logits = forward(model, cur_x)
    cur = cross_entropy(cur_logits, cur_y)
    total = cur.value

    rep = None
    dis = None
    if replay_batch is not None:
        rep_x, rep_y = replay_batch
        if distill and teacher is None:
            raise ConfigurationError(
                "replay batch with distillation active requires a teacher snapshot"
            )
        rep_feat, rep_logits = forward(model, rep_x)
        if replay_ce:
            rep = cross_entropy(rep_logits, rep_y)
            total += rep.value
        if distill:
            teacher_feat, _ = forward(teacher, rep_x)
            dis = w2_distill(rep_feat, teacher_feat)
            total += dis.value

    return MaerLoss(total=total, current_ce=cur, replay_ce=rep, distill=dis)
