"""Episodic memory with three update policies.

The expansion policy streams task samples into a capacity-bounded buffer:
while the buffer has room every sample is appended; once full, a sample
whose feature lies strictly outside the buffer's current diameter (measured
from the feature centroid) always replaces a uniformly random slot, and any
other sample falls back to reservoir replacement driven by the global stream
counter. Plain reservoir and per-task ring policies are provided as
baselines, and all three share the same counter semantics: ``n`` grows by
the stream length on every update call and never resets.
"""

from __future__ import annotations

import csv
from typing import Callable, NamedTuple

import numpy as np

from .validation import ConfigurationError

__all__ = [
    "EpisodicMemory",
    "ReplayBatch",
    "centroid",
    "diameter",
    "mes_update",
    "reservoir_update",
    "ring_update",
    "sample_batch",
    "dump_buffer_csv",
]

FeatureFn = Callable[[np.ndarray], np.ndarray]


class ReplayBatch(NamedTuple):
    inputs: np.ndarray
    labels: np.ndarray
    task_ids: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]


class EpisodicMemory:
    """Capacity-bounded buffer of (input, label, task_id) triples.

    ``n`` counts every stream element ever offered across all update calls.
    In ``fast`` mode buffer features are cached between stream elements:
    replaced rows are patched in place and the whole cache is recomputed
    every ``refresh_every`` elements. ``exact`` mode recomputes buffer
    features from scratch for each element, exactly as the expansion policy
    is defined.
    """

    def __init__(self, mem_size: int, mode: str = "exact", refresh_every: int = 64):
        if mem_size < 1:
            raise ConfigurationError(f"mem_size must be >= 1, got {mem_size}")
        if mode not in ("exact", "fast"):
            raise ConfigurationError(f"mode must be 'exact' or 'fast', got {mode!r}")
        if refresh_every < 1:
            raise ConfigurationError(
                f"refresh_every must be >= 1, got {refresh_every}"
            )
        self.mem_size = int(mem_size)
        self.mode = mode
        self.refresh_every = int(refresh_every)
        self.items: list[tuple[np.ndarray, int, int]] = []
        self.n = 0
        self._cached_features: np.ndarray | None = None
        self._since_refresh = 0

    def __len__(self) -> int:
        return len(self.items)

    def is_empty(self) -> bool:
        return not self.items

    def inputs_matrix(self) -> np.ndarray:
        return np.stack([x for x, _, _ in self.items])

    def _invalidate_cache(self) -> None:
        self._cached_features = None

    def _buffer_features(self, phi: FeatureFn) -> np.ndarray:
        if self.mode == "exact":
            return phi(self.inputs_matrix())
        if (
            self._cached_features is None
            or self._cached_features.shape[0] != len(self.items)
            or self._since_refresh >= self.refresh_every
        ):
            self._cached_features = phi(self.inputs_matrix())
            self._since_refresh = 0
        return self._cached_features

    def _replace(self, slot: int, item: tuple, feature: np.ndarray | None) -> None:
        self.items[slot] = item
        if self.mode == "fast" and self._cached_features is not None:
            if feature is not None:
                self._cached_features[slot] = feature
            else:
                self._invalidate_cache()


def centroid(features) -> np.ndarray:
    """Arithmetic mean of the feature rows.

    Under the Euclidean metric this is the point minimising the sum of
    squared distances to all rows, so it serves as the buffer centroid.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 1:
        raise ValueError("centroid requires a non-empty 2-D feature matrix")
    return f.mean(axis=0)


def diameter(features, center) -> float:
    """Largest Euclidean distance from ``center`` to any feature row."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 1:
        raise ValueError("diameter requires a non-empty 2-D feature matrix")
    c = np.asarray(center, dtype=np.float64)
    return float(np.linalg.norm(f - c, axis=1).max())


def mes_update(
    mem: EpisodicMemory,
    task_data,
    phi: FeatureFn,
    rng: np.random.Generator,
    task_id: int = 0,
) -> EpisodicMemory:
    """Stream ``task_data`` into the buffer under the expansion policy.

    ``task_data`` is an ordered iterable of ``(input, label)`` pairs and
    ``phi`` maps an m-by-d input matrix to its m-by-f feature matrix. Per
    element: append while there is room; otherwise admit deterministically
    when the element's feature-to-centroid distance strictly exceeds the
    buffer diameter (evicting a uniformly random slot), else fall back to
    reservoir replacement over the global counter.

    The fallback draws uniformly over the count of elements seen so far
    including the current one (``j`` below is 1-based at the draw), which
    yields the classical uniform-retention reservoir guarantee.
    """
    j = 0
    for x, y in task_data:
        j += 1
        x = np.asarray(x, dtype=np.float64)
        if len(mem.items) < mem.mem_size:
            mem.items.append((x, int(y), int(task_id)))
            mem._invalidate_cache()
        else:
            feats = mem._buffer_features(phi)
            c = centroid(feats)
            diam = diameter(feats, c)
            fx = phi(x[np.newaxis, :])[0]
            if float(np.linalg.norm(fx - c)) > diam:
                slot = int(rng.integers(0, len(mem.items)))
                mem._replace(slot, (x, int(y), int(task_id)), fx)
            else:
                i = int(rng.integers(0, mem.n + j))
                if i < mem.mem_size:
                    mem._replace(i, (x, int(y), int(task_id)), fx)
        mem._since_refresh += 1
    mem.n += j
    return mem


def reservoir_update(
    mem: EpisodicMemory,
    task_data,
    rng: np.random.Generator,
    task_id: int = 0,
) -> EpisodicMemory:
    """Stream ``task_data`` into the buffer with plain reservoir sampling.

    Identical to the expansion policy with the expansion branch removed, so
    on streams whose features never exceed the diameter both policies draw
    the same random numbers and keep the same items. The draw for the j-th
    element of the stream (1-based) is uniform over the ``n + j`` elements
    seen so far, giving every element the classical ``mem_size / total``
    retention probability.
    """
    j = 0
    for x, y in task_data:
        j += 1
        x = np.asarray(x, dtype=np.float64)
        if len(mem.items) < mem.mem_size:
            mem.items.append((x, int(y), int(task_id)))
            mem._invalidate_cache()
        else:
            i = int(rng.integers(0, mem.n + j))
            if i < mem.mem_size:
                mem._replace(i, (x, int(y), int(task_id)), None)
    mem.n += j
    return mem


def ring_update(
    mem: EpisodicMemory,
    task_data,
    per_task_quota: int,
    task_id: int = 0,
) -> EpisodicMemory:
    """FIFO within a fixed per-task segment of ``per_task_quota`` slots."""
    if per_task_quota < 1:
        raise ConfigurationError(
            f"per_task_quota must be >= 1, got {per_task_quota}"
        )
    j = 0
    for x, y in task_data:
        x = np.asarray(x, dtype=np.float64)
        segment = [k for k, (_, _, t) in enumerate(mem.items) if t == task_id]
        if len(segment) >= per_task_quota:
            del mem.items[segment[0]]
        elif len(mem.items) >= mem.mem_size:
            raise ConfigurationError(
                f"ring buffer overflow: {len(mem.items)} items at capacity "
                f"{mem.mem_size}; per_task_quota {per_task_quota} admits too "
                "many task segments"
            )
        mem.items.append((x, int(y), int(task_id)))
        j += 1
    mem._invalidate_cache()
    mem.n += j
    return mem


def sample_batch(mem: EpisodicMemory, k: int, rng: np.random.Generator) -> ReplayBatch:
    """Draw ``min(k, |items|)`` items uniformly without replacement.

    An empty memory or ``k <= 0`` yields a zero-length batch, which callers
    treat as "omit the replay terms".
    """
    m = min(max(k, 0), len(mem.items))
    if m == 0:
        width = mem.items[0][0].shape[0] if mem.items else 0
        return ReplayBatch(
            inputs=np.empty((0, width)),
            labels=np.empty(0, dtype=np.int64),
            task_ids=np.empty(0, dtype=np.int64),
        )
    idx = rng.choice(len(mem.items), size=m, replace=False)
    xs = np.stack([mem.items[i][0] for i in idx])
    ys = np.array([mem.items[i][1] for i in idx], dtype=np.int64)
    ts = np.array([mem.items[i][2] for i in idx], dtype=np.int64)
    return ReplayBatch(inputs=xs, labels=ys, task_ids=ts)


def dump_buffer_csv(mem: EpisodicMemory, path) -> None:
    """Write the buffer's (task_id, label, slot_index) rows for analysis."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task_id", "label", "slot_index"])
        for slot, (_, label, task) in enumerate(mem.items):
            writer.writerow([task, label, slot])
