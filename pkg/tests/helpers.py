"""Shared test utilities.

Finite-difference gradient oracles, and a deterministic MNIST-shaped corpus
used by the stream-level tests whenever the real IDX files are not present
on the machine.
"""

import os
import struct
from pathlib import Path

import numpy as np

from maer.datasets import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, LabeledDataset, load_mnist_idx

FD_STEP = 1e-5
FD_TOL = 1e-6


def idx_bytes(magic, dims, payload):
    """Serialize an IDX body: big-endian magic, dimension sizes, raw payload."""
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    return header + payload


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    path.write_bytes(idx_bytes(IDX_IMAGES_MAGIC, (n, rows, cols), images.tobytes()))


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    path.write_bytes(idx_bytes(IDX_LABELS_MAGIC, (labels.size,), labels.tobytes()))


def numeric_grad(f, x, step=FD_STEP):
    """Central finite differences of the scalar function ``f`` w.r.t. ``x``.

    ``x`` is perturbed in place and restored; ``f`` takes no arguments and
    must read the current contents of ``x``.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        hi = f()
        x[idx] = orig - step
        lo = f()
        x[idx] = orig
        grad[idx] = (hi - lo) / (2.0 * step)
    return grad


def max_rel_err(analytic, numeric):
    """Worst elementwise relative error, floored at unit scale.

    The unit floor keeps the comparison meaningful where both gradients are
    near zero; for O(1) entries it is the plain relative error.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def model_param_fd(model, loss_fn, step=FD_STEP):
    """Finite-difference gradient of ``loss_fn()`` w.r.t. every model parameter.

    Returns a list aligned with ``model.parameters()``.
    """
    return [numeric_grad(loss_fn, p, step) for p in model.parameters()]


def kink_safe(model, x, margin=1e-3):
    """True when every rectifier pre-activation is at least ``margin`` from 0.

    Central differences straddle the rectifier kink when a pre-activation
    sits within the step of zero, measuring the half-slope instead of the
    (sub)gradient; gradient checks only make sense on instances that clear
    the kinks.
    """
    w1, w2, _ = model.weights
    b1, b2, _ = model.biases
    z1 = x @ w1 + b1
    z2 = np.maximum(z1, 0.0) @ w2 + b2
    return float(min(np.abs(z1).min(), np.abs(z2).min())) > margin


def fd_instance(seed, n=3, d_in=3, hidden=4, classes=2):
    """A random tiny model and batch suitable for finite-difference checks.

    Biases are randomized (zero biases park dead rows exactly on the second
    rectifier's kink) and the draw is repeated until the batch clears every
    kink by a safe margin.
    """
    from maer.nn import MlpModel

    for attempt in range(100):
        rng = np.random.default_rng(1_000_003 * seed + attempt)
        model = MlpModel(d_in, classes, hidden, rng)
        for b in model.biases:
            b += rng.uniform(-0.3, 0.3, size=b.shape)
        x = rng.random((n, d_in))
        if kink_safe(model, x):
            return model, x, rng
    raise AssertionError("no kink-safe instance found; loosen the margin")


# ---------------------------------------------------------------------------
# MNIST-shaped fallback corpus.
#
# Each class is a fixed arrangement of Gaussian bumps on a 28x28 canvas;
# samples jitter the arrangement's position and amplitudes and add pixel
# noise. Every class uses the same bump count, width, and amplitude
# distribution, so the pixel-value histogram carries (almost) no class
# signal: like real digits under pixel permutation, the class must be read
# from WHERE the mass sits. Without that property a permutation-invariant
# shortcut would transfer across permuted tasks and suppress forgetting.
# ---------------------------------------------------------------------------

_SIDE = 28
_TEMPLATE_SEED = 20260815
_BUMPS_PER_CLASS = 3
_BUMP_WIDTH = 2.2
_MIN_BUMP_SEPARATION = 8.0


def _class_templates():
    """Ten fixed bump-center arrangements with matched within-class geometry.

    Centers are rejection-sampled to keep bumps within a class well
    separated, so bump overlap (which would distort the histogram) is the
    same - essentially zero - for every class.
    """
    rng = np.random.default_rng(_TEMPLATE_SEED)
    templates = []
    for _ in range(10):
        centers = []
        stalls = 0
        while len(centers) < _BUMPS_PER_CLASS:
            cand = rng.uniform(7.0, 21.0, size=2)
            if all(np.linalg.norm(cand - c) >= _MIN_BUMP_SEPARATION for c in centers):
                centers.append(cand)
                stalls = 0
            else:
                stalls += 1
                if stalls > 200:
                    # the partial arrangement boxed itself in; start over
                    centers = []
                    stalls = 0
        templates.append(np.array(centers))
    return templates


_TEMPLATES = _class_templates()
_GRID_Y, _GRID_X = np.mgrid[0:_SIDE, 0:_SIDE].astype(np.float64)


def make_pseudo_digits(n, seed, noise=0.25, max_shift=4.0):
    """Deterministic 784-dim, 10-class corpus with MNIST-like shape.

    Labels are balanced (i mod 10). Per sample, the class's bump arrangement
    is shifted by a uniform offset, each bump's amplitude jitters with a
    class-independent distribution, and Gaussian pixel noise is added before
    clipping to [0, 1].
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % 10
    images = np.empty((n, _SIDE * _SIDE), dtype=np.float64)
    for i in range(n):
        centers = _TEMPLATES[labels[i]]
        shift = rng.uniform(-max_shift, max_shift, size=2)
        canvas = np.zeros((_SIDE, _SIDE))
        for cy, cx in centers:
            amp = rng.uniform(0.8, 1.2)
            dy = _GRID_Y - (cy + shift[0])
            dx = _GRID_X - (cx + shift[1])
            canvas += amp * np.exp(-(dy * dy + dx * dx) / (2.0 * _BUMP_WIDTH ** 2))
        canvas += rng.normal(0.0, noise, size=canvas.shape)
        images[i] = np.clip(canvas, 0.0, 1.0).ravel()
    return LabeledDataset(images, labels, 10)


_MNIST_STEMS = (
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
)


def find_real_mnist():
    """Return (train, test) LabeledDatasets if real MNIST IDX files exist.

    Looks under $MNIST_DIR then ./data/mnist; returns None when absent.
    """
    candidates = []
    env = os.environ.get("MNIST_DIR")
    if env:
        candidates.append(Path(env))
    candidates.append(Path("data/mnist"))
    for directory in candidates:
        pairs = []
        for images_stem, labels_stem in _MNIST_STEMS:
            resolved = []
            for stem in (images_stem, labels_stem):
                for name in (stem, stem + ".gz"):
                    if (directory / name).is_file():
                        resolved.append(directory / name)
                        break
            if len(resolved) == 2:
                pairs.append(resolved)
        if len(pairs) == 2:
            return (
                load_mnist_idx(*pairs[0]),
                load_mnist_idx(*pairs[1]),
            )
    return None


def digit_bases(train_n=10000, test_n=2000):
    """The (train, test) bases the stream-level suites run on.

    Real MNIST when available, otherwise the deterministic pseudo-digit
    corpus; the second return value names which one was used.
    """
    real = find_real_mnist()
    if real is not None:
        return real, "real MNIST"
    return (
        make_pseudo_digits(train_n, seed=101, noise=0.25),
        make_pseudo_digits(test_n, seed=202, noise=0.25),
    ), "pseudo-digit fallback (real MNIST IDX files not found)"
