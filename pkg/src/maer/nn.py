"""Dense MLP numerics: explicit forward, backward, SGD step, and frozen snapshots.

The architecture is fixed at three weight layers, input -> hidden -> hidden ->
classes, with rectifier activations on the two hidden layers and an identity
output. The feature extractor is everything up to the second hidden
activation; the final affine layer is the classifier head. Everything is
float64 and deterministic given the generator passed in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import (
    ConfigurationError,
    DimensionError,
    as_float_matrix,
    check_width,
)

__all__ = [
    "MlpModel",
    "TeacherSnapshot",
    "GradientSet",
    "forward",
    "backward",
    "sgd_step",
    "snapshot",
]


def _glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class MlpModel:
    """Three-weight-layer MLP with an explicit feature/classifier split.

    Weights are drawn in declaration order (first layer to last) from the
    generator handed in, so a single seeded generator reproduces the model
    bit for bit. Biases start at zero.
    """

    def __init__(
        self,
        input_dim: int,
        num_classes: int,
        hidden_width: int = 256,
        rng: np.random.Generator | None = None,
    ):
        if input_dim < 1 or num_classes < 1 or hidden_width < 1:
            raise ConfigurationError(
                "input_dim, num_classes and hidden_width must all be >= 1"
            )
        if rng is None:
            rng = np.random.default_rng(0)
        self.input_dim = int(input_dim)
        self.num_classes = int(num_classes)
        self.hidden_width = int(hidden_width)
        dims = [self.input_dim, self.hidden_width, self.hidden_width, self.num_classes]
        self.weights = [_glorot_uniform(dims[i], dims[i + 1], rng) for i in range(3)]
        self.biases = [np.zeros(dims[i + 1]) for i in range(3)]
        self.frozen = False

    def parameters(self) -> list[np.ndarray]:
        """All parameter arrays in declaration order (W1, b1, W2, b2, W3, b3)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "MlpModel":
        dup = object.__new__(MlpModel)
        dup.input_dim = self.input_dim
        dup.num_classes = self.num_classes
        dup.hidden_width = self.hidden_width
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        dup.frozen = False
        return dup


class TeacherSnapshot(MlpModel):
    """Frozen deep copy of a model's parameters, usable anywhere a model is."""

    def __init__(self, source: MlpModel):
        self.input_dim = source.input_dim
        self.num_classes = source.num_classes
        self.hidden_width = source.hidden_width
        self.weights = [w.copy() for w in source.weights]
        self.biases = [b.copy() for b in source.biases]
        for arr in self.parameters():
            arr.setflags(write=False)
        self.frozen = True


@dataclass
class GradientSet:
    """One gradient array per parameter array, shape-matched to a model."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, model: MlpModel) -> "GradientSet":
        return cls(
            weights=[np.zeros_like(w) for w in model.weights],
            biases=[np.zeros_like(b) for b in model.biases],
        )

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet(
            weights=[a + b for a, b in zip(self.weights, other.weights)],
            biases=[a + b for a, b in zip(self.biases, other.biases)],
        )

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def forward(model: MlpModel, batch) -> tuple[np.ndarray, np.ndarray]:
    """Run the network on a batch.

    Returns ``(features, logits)`` where features are the post-activation
    outputs of the second hidden layer and ``logits = features @ W3 + b3``.
    """
    x = as_float_matrix(batch, "batch")
    check_width(x, model.input_dim, "batch")
    w1, w2, w3 = model.weights
    b1, b2, b3 = model.biases
    h1 = np.maximum(x @ w1 + b1, 0.0)
    h2 = np.maximum(h1 @ w2 + b2, 0.0)
    logits = h2 @ w3 + b3
    return h2, logits


def backward(
    model: MlpModel,
    batch,
    logit_grad,
    feature_grad=None,
) -> GradientSet:
    """Gradients of a scalar loss w.r.t. every parameter.

    ``logit_grad`` is d(loss)/d(logits); ``feature_grad``, when given, is the
    direct d(loss)/d(features) contribution (e.g. from a feature-space
    distillation term). Both paths accumulate through the shared layers.
    """
    x = as_float_matrix(batch, "batch")
    check_width(x, model.input_dim, "batch")
    w1, w2, w3 = model.weights
    b1, b2, b3 = model.biases

    z1 = x @ w1 + b1
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ w2 + b2
    h2 = np.maximum(z2, 0.0)

    n = x.shape[0]
    g_logits = as_float_matrix(logit_grad, "logit_grad")
    if g_logits.shape != (n, model.num_classes):
        raise DimensionError(
            f"logit_grad has shape {g_logits.shape}, "
            f"expected {(n, model.num_classes)}"
        )

    g_w3 = h2.T @ g_logits
    g_b3 = g_logits.sum(axis=0)

    g_h2 = g_logits @ w3.T
    if feature_grad is not None:
        g_feat = as_float_matrix(feature_grad, "feature_grad")
        if g_feat.shape != (n, model.hidden_width):
            raise DimensionError(
                f"feature_grad has shape {g_feat.shape}, "
                f"expected {(n, model.hidden_width)}"
            )
        g_h2 = g_h2 + g_feat

    g_z2 = g_h2 * (z2 > 0.0)
    g_w2 = h1.T @ g_z2
    g_b2 = g_z2.sum(axis=0)

    g_z1 = (g_z2 @ w2.T) * (z1 > 0.0)
    g_w1 = x.T @ g_z1
    g_b1 = g_z1.sum(axis=0)

    return GradientSet(weights=[g_w1, g_w2, g_w3], biases=[g_b1, g_b2, g_b3])


def sgd_step(model: MlpModel, grads: GradientSet, lr: float) -> None:
    """In-place update ``p <- p - lr * g`` for every parameter."""
    if lr < 0:
        raise ConfigurationError(f"learning rate must be >= 0, got {lr}")
    if model.frozen:
        raise ConfigurationError("cannot update a frozen snapshot")
    for p, g in zip(model.parameters(), grads.parameters()):
        if p.shape != g.shape:
            raise DimensionError(
                f"gradient shape {g.shape} does not match parameter shape {p.shape}"
            )
        p -= lr * g


def snapshot(model: MlpModel) -> TeacherSnapshot:
    """Deep-copy the model's parameters into a frozen teacher."""
    return TeacherSnapshot(model)
