"""Synthetic Gaussian-mixture data for benchmarks and experiments."""

from __future__ import annotations

import numpy as np

from .core import DataMatrix


def gaussian_mixture(
    n: int,
    d: int,
    k: int,
    seed: int,
    spread: float = 0.05,
    box: tuple[float, float] = (0.15, 0.85),
) -> DataMatrix:
    """``n`` points in ``d`` dimensions from ``k`` isotropic Gaussian blobs.

    Centers are drawn uniformly inside ``box`` (values land in roughly
    normalized units); labels record the generating blob.
    """
    if n < k:
        raise ValueError(f"need at least {k} points for {k} blobs")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(box[0], box[1], size=(k, d))
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    points = []
    labels = []
    for ci in range(k):
        points.append(rng.normal(centers[ci], spread, size=(sizes[ci], d)))
        labels.extend([ci] * sizes[ci])
    values = np.vstack(points)
    order = rng.permutation(n)
    return DataMatrix(values[order], np.asarray(labels, dtype=np.int64)[order])
