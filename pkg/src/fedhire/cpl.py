"""Competitive penalized learning engine.

The same engine drives client-side clusterlet discovery and each server-side
aggregation stage: an over-provisioned set of clusterlets competes for
objects, the winner of each presentation is rewarded, its nearest rival is
penalized, and clusterlets that collapse (by weight) or go unclaimed (no
members) are eliminated. The surviving clusterlet count is how the model
estimates the number of clusters without being told it.

Scoring details, fixed across the package:

- The object-clusterlet dissimilarity is the squared feature-weighted
  Euclidean distance, with importance rows scaled relative to uniform
  (``d * m_j``), so uniform weighting reproduces the plain squared
  Euclidean distance.
- Scores are ``gamma_j * w_j * exp(-dissimilarity)``. The fairness factor
  ``gamma`` is refreshed once per epoch; clusterlet weights ``w`` update
  live after every presentation.

This combination is what makes redundant clusterlets die: the per-epoch
fairness snapshot lets one clusterlet sweep a whole dense region within an
epoch, the near-flat similarities inside a tight cluster let fairness and
weight differences decide the sweep, and swept clusterlets (no members for
two consecutive epochs) are pruned as dead units.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import (
    AffiliationMatrix,
    ClusterletState,
    DataMatrix,
    FeatureClusterMatrix,
    feature_cluster_matrix_client,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_EPOCHS = 100
DEFAULT_ELIMINATION_THRESHOLD = 1e-3
# consecutive memberless epochs after which an active clusterlet is pruned
DEAD_UNIT_EPOCHS = 2
# exp(-D) underflows to 0.0 for D > ~745; flooring keeps the penalty ratio
# finite for absurdly distant object/clusterlet pairs
SIMILARITY_FLOOR = 1e-300


@dataclass
class CplConfig:
    """Hyperparameters of a single competitive learning run."""

    eta: float
    k0: int
    max_epochs: int = DEFAULT_MAX_EPOCHS
    elimination_threshold: float = DEFAULT_ELIMINATION_THRESHOLD
    rng_seed: int = 0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.k0 < 2:
            raise ValueError(f"k0 must be >= 2, got {self.k0}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 0.0 < self.elimination_threshold < 0.5:
            raise ValueError(
                f"elimination_threshold must be in (0, 0.5), "
                f"got {self.elimination_threshold}"
            )


@dataclass
class CplResult:
    """Converged clusterlets (nonempty survivors only) and their affiliation."""

    clusterlets: ClusterletState
    affiliation: AffiliationMatrix
    converged_k: int
    epochs_used: int
    converged: bool = True
    feature_weights: FeatureClusterMatrix | None = None


def _squash_scalar(raw: float) -> float:
    # numerically stable two-branch sigmoid; the engine loop calls this
    # directly, so the array form below must route through the same code
    z = 10.0 * (raw + 5.0)
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def squash_weight(raw):
    """Sigmoid squash of a raw weight into (0, 1): 1 / (1 + e^{-10(raw + 5)})."""
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim == 0:
        return np.float64(_squash_scalar(float(arr)))
    out = np.array([_squash_scalar(float(v)) for v in arr.ravel()])
    return out.reshape(arr.shape)


def compute_gamma(win_counts: np.ndarray) -> np.ndarray:
    """Relative winning possibility, 1 - g_j / sum_t g_t.

    All-ones before any winner has been selected (zero total), so every
    clusterlet starts with full winning possibility.
    """
    win_counts = np.asarray(win_counts)
    if (win_counts < 0).any():
        raise ValueError("win counts must be nonnegative")
    total = win_counts.sum()
    if total == 0:
        return np.ones(win_counts.shape[0])
    return 1.0 - win_counts / total


def competition_similarities(
    x: np.ndarray, centroids: np.ndarray, m_entries: np.ndarray
) -> np.ndarray:
    """exp(-D) over clusterlets, D the squared relative-weighted distance.

    ``D_j = ||(d * m_j) ⊙ (x - c_j)||²``; with uniform rows m this is the
    plain squared Euclidean distance.
    """
    d = centroids.shape[1]
    diff = (d * m_entries) * (x[None, :] - centroids)
    return np.maximum(np.exp(-(diff**2).sum(axis=1)), SIMILARITY_FLOOR)


def select_winner_and_rival(
    x: np.ndarray, state: ClusterletState, m: FeatureClusterMatrix
) -> tuple[int, int]:
    """Pick the winning clusterlet and its nearest rival for one object.

    Both maximize gamma_j * w_j * sim_j over active clusterlets, the rival
    excluding the winner. Ties break toward the lowest index.
    """
    if state.active_count() < 2:
        raise RuntimeError("winner/rival selection needs >= 2 active clusterlets")
    sims = competition_similarities(x, state.centroids, m.entries)
    scores = compute_gamma(state.win_counts) * state.weights * sims
    scores[~state.active] = -np.inf
    v = int(np.argmax(scores))
    scores[v] = -np.inf
    r = int(np.argmax(scores))
    return v, r


def reward_winner(state: ClusterletState, v: int, eta: float) -> ClusterletState:
    """Reward clusterlet ``v``: raw weight up by eta, win count up by one.

    Mutates ``state`` in place and returns it.
    """
    if not state.active[v]:
        raise RuntimeError(f"cannot reward inactive clusterlet {v}")
    state.raw_weights[v] += eta
    state.weights[v] = squash_weight(state.raw_weights[v])
    state.win_counts[v] += 1
    return state


def penalize_rival(
    state: ClusterletState,
    v: int,
    r: int,
    x: np.ndarray,
    m: FeatureClusterMatrix,
    eta: float,
) -> ClusterletState:
    """Penalize rival ``r`` by eta times the rival/winner similarity ratio.

    A rival about as similar as the winner takes nearly the full eta step;
    far rivals are barely touched. Mutates ``state`` in place and returns it.
    """
    if v == r:
        raise RuntimeError("winner and rival must differ")
    if not (state.active[v] and state.active[r]):
        raise RuntimeError("winner and rival must both be active")
    sims = competition_similarities(x, state.centroids, m.entries)
    state.raw_weights[r] -= eta * sims[r] / sims[v]
    state.weights[r] = squash_weight(state.raw_weights[r])
    return state


def eliminate_clusterlets(
    state: ClusterletState, threshold: float
) -> tuple[ClusterletState, bool]:
    """Deactivate clusterlets whose weight fell below ``threshold``.

    Never drops below two active clusterlets in one call: if fewer than two
    would survive, the two highest-weight clusterlets are retained. Returns
    the state and a flag telling whether any weight fell below the threshold
    (even when the two-clusterlet floor retained it). Mutates in place.
    """
    below = state.active & (state.weights < threshold)
    if not below.any():
        return state, False
    survivors = state.active & ~below
    if survivors.sum() < 2:
        active_idx = np.flatnonzero(state.active)
        # highest weight first, ties toward the lower index
        order = active_idx[np.lexsort((active_idx, -state.weights[active_idx]))]
        keep = order[: min(2, order.size)]
        survivors = np.zeros_like(state.active)
        survivors[keep] = True
    state.active = survivors
    return state, True


def run_cpl(
    data: DataMatrix, config: CplConfig, weighting: bool = True
) -> CplResult:
    """Run the full competitive penalized learning loop on one dataset.

    Centroids start at ``k0`` distinct objects sampled with the configured
    seed; raw weights start at zero (weights effectively 1), win counts at
    zero, and the feature-cluster matrix uniform. Each epoch presents every
    object in index order, assigns it to the winner, rewards the winner and
    penalizes the rival. At epoch end the centroids of nonempty active
    clusterlets are recomputed as member means, weight-collapsed clusterlets
    and dead units (no members for DEAD_UNIT_EPOCHS consecutive epochs) are
    deactivated down to a floor of two, orphaned objects are reassigned to
    the nearest surviving clusterlet, and (with ``weighting`` on) the
    feature-cluster matrix is refreshed. The loop stops as soon as the
    affiliation repeats between consecutive epochs.

    The result is compacted: only clusterlets that remain active *and* own
    at least one object are reported, and the affiliation is re-indexed onto
    them.
    """
    values = data.values
    n, d = values.shape
    if n < 2:
        raise ValueError(f"need at least 2 objects, got {n}")
    if config.k0 > n:
        raise ValueError(f"k0={config.k0} exceeds object count {n}")

    rng = np.random.default_rng(config.rng_seed)
    init_idx = rng.choice(n, size=config.k0, replace=False)
    state = ClusterletState.initial(values[init_idx])
    m = FeatureClusterMatrix.uniform(config.k0, d)

    assignments = np.full(n, -1, dtype=np.int64)
    prev_assignments = None
    empty_streak = np.zeros(config.k0, dtype=np.int64)
    converged = False
    epochs_used = 0

    for epoch in range(config.max_epochs):
        epochs_used = epoch + 1

        # Similarities are fixed within an epoch (centroids and M only move
        # at epoch end), so they are precomputed for all object/clusterlet
        # pairs; the fairness factor gamma is snapshotted here as well.
        scaled = d * m.entries
        diff = scaled[None, :, :] * (values[:, None, :] - state.centroids[None, :, :])
        sims = np.maximum(np.exp(-(diff**2).sum(axis=2)), SIMILARITY_FLOOR)
        gamma = compute_gamma(state.win_counts)

        inactive = ~state.active
        raw = state.raw_weights
        weights = state.weights
        win_counts = state.win_counts
        scores = np.empty(state.k)
        for i in range(n):
            np.multiply(gamma, weights, out=scores)
            scores *= sims[i]
            scores[inactive] = -np.inf
            v = int(scores.argmax())
            assignments[i] = v
            raw[v] += config.eta
            weights[v] = _squash_scalar(raw[v])
            win_counts[v] += 1
            scores[v] = -np.inf
            r = int(scores.argmax())
            raw[r] -= config.eta * sims[i, r] / sims[i, v]
            weights[r] = _squash_scalar(raw[r])

        # batch centroid update: nonempty active clusterlets move to the
        # mean of their members
        counts = np.bincount(assignments, minlength=state.k)
        nonempty = (counts > 0) & state.active
        if nonempty.any():
            sums = np.zeros_like(state.centroids)
            np.add.at(sums, assignments, values)
            state.centroids[nonempty] = sums[nonempty] / counts[nonempty, None]

        empty_streak[counts > 0] = 0
        empty_streak[(counts == 0) & state.active] += 1
        _deactivate(state, counts, empty_streak, config.elimination_threshold)

        orphaned = ~state.active[assignments]
        if orphaned.any():
            active_idx = np.flatnonzero(state.active)
            scaled = d * m.entries[active_idx]
            diff = scaled[None, :, :] * (
                values[orphaned][:, None, :] - state.centroids[active_idx][None, :, :]
            )
            nearest = np.argmin((diff**2).sum(axis=2), axis=1)
            assignments[orphaned] = active_idx[nearest]

        if prev_assignments is not None and np.array_equal(
            assignments, prev_assignments
        ):
            converged = True
            break
        prev_assignments = assignments.copy()

        if weighting:
            m = _refresh_feature_weights(values, assignments, state, m)

    if not converged:
        logger.info(
            "competitive learning did not converge within %d epochs",
            config.max_epochs,
        )

    return _compact_result(assignments, state, m, epochs_used, converged)


def _deactivate(state, counts, empty_streak, threshold):
    """Weight-based elimination plus dead-unit pruning, with a 2-active floor."""
    doomed = state.active & (
        (state.weights < threshold) | (empty_streak >= DEAD_UNIT_EPOCHS)
    )
    if not doomed.any():
        return
    survivors = state.active & ~doomed
    if survivors.sum() < 2:
        active_idx = np.flatnonzero(state.active)
        # prefer nonempty clusterlets, then higher weight, then lower index
        order = active_idx[
            np.lexsort(
                (
                    active_idx,
                    -state.weights[active_idx],
                    -(counts[active_idx] > 0).astype(np.int64),
                )
            )
        ]
        keep = order[: min(2, order.size)]
        survivors = np.zeros_like(state.active)
        survivors[keep] = True
    state.active = survivors


def _refresh_feature_weights(values, assignments, state, m):
    """Recompute M rows for nonempty active clusterlets; others keep theirs."""
    counts = np.bincount(assignments, minlength=state.k)
    live = np.flatnonzero((counts > 0) & state.active)
    remap = np.full(state.k, -1, dtype=np.int64)
    remap[live] = np.arange(live.size)
    sub_affil = AffiliationMatrix(remap[assignments], k=live.size)
    sub_m = feature_cluster_matrix_client(
        DataMatrix(values), sub_affil, state.centroids[live]
    )
    entries = m.entries.copy()
    entries[live] = sub_m.entries
    return FeatureClusterMatrix(entries=entries)


def _compact_result(assignments, state, m, epochs_used, converged):
    counts = np.bincount(assignments, minlength=state.k)
    survivors = np.flatnonzero((counts > 0) & state.active)
    remap = np.full(state.k, -1, dtype=np.int64)
    remap[survivors] = np.arange(survivors.size)
    affiliation = AffiliationMatrix(remap[assignments], k=survivors.size)
    clusterlets = ClusterletState(
        centroids=state.centroids[survivors].copy(),
        win_counts=state.win_counts[survivors].copy(),
        raw_weights=state.raw_weights[survivors].copy(),
        weights=state.weights[survivors].copy(),
        active=np.ones(survivors.size, dtype=bool),
    )
    return CplResult(
        clusterlets=clusterlets,
        affiliation=affiliation,
        converged_k=survivors.size,
        epochs_used=epochs_used,
        converged=converged,
        feature_weights=FeatureClusterMatrix(entries=m.entries[survivors].copy()),
    )
