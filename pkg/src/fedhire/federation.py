"""Experiment harness: non-IID fragmentation and one-shot orchestration.

The fragmentation protocol splits every ground-truth cluster into several
clusterlets with k-means and scatters them randomly across clients, so each
client sees incomplete pieces of the global clusters. The orchestrator then
runs the whole pipeline with exactly one upload per client: local clusterlet
discovery, centroid stacking, hierarchy construction, encoding, and the
final weighted partition, with labels propagated back to original objects.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .client import ClientPayload, run_fcpl
from .core import AffiliationMatrix, DataMatrix
from .cpl import CplResult
from .server import (
    GlobalClustering,
    Hierarchy,
    encode_hierarchy,
    final_clustering,
    propagate_labels,
    run_mcpl,
    stack_payloads,
)

logger = logging.getLogger(__name__)

UNASSIGNED = -1


class ExperimentError(RuntimeError):
    """A federated run could not produce a result (e.g. no usable clients)."""


@dataclass
class FederationConfig:
    """Knobs of one simulated federated experiment."""

    client_count: int
    k_star: int
    eta: float = 0.05
    k0_fraction: float = 0.5
    seed: int = 0
    fragments_per_cluster: int | str = "auto"
    parallel_clients: bool = False
    k0_absolute: int | None = None
    max_epochs: int | None = None

    def __post_init__(self):
        if self.client_count < 1:
            raise ValueError(f"client_count must be >= 1, got {self.client_count}")
        if self.k_star < 2:
            raise ValueError(f"k_star must be >= 2, got {self.k_star}")
        if isinstance(self.fragments_per_cluster, str):
            if self.fragments_per_cluster != "auto":
                raise ValueError("fragments_per_cluster must be an int or 'auto'")
        elif self.fragments_per_cluster < 1:
            raise ValueError("fragments_per_cluster must be positive")


@dataclass
class PartitionPlan:
    """Disjoint per-client object index lists covering the dataset."""

    client_indices: list[np.ndarray]
    provenance: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.client_indices = [
            np.asarray(ix, dtype=np.int64) for ix in self.client_indices
        ]
        flat = (
            np.concatenate(self.client_indices)
            if self.client_indices
            else np.empty(0, np.int64)
        )
        if flat.size != np.unique(flat).size:
            raise ValueError("client index lists must be disjoint")

    @property
    def client_count(self) -> int:
        return len(self.client_indices)

    @property
    def object_count(self) -> int:
        return sum(ix.size for ix in self.client_indices)

    def to_json(self) -> str:
        return json.dumps(
            {
                "clients": [
                    {"id": cid, "object_indices": ix.tolist()}
                    for cid, ix in enumerate(self.client_indices)
                ],
                "provenance": self.provenance,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "PartitionPlan":
        obj = json.loads(text)
        clients = sorted(obj["clients"], key=lambda c: c["id"])
        return cls(
            client_indices=[np.asarray(c["object_indices"], np.int64) for c in clients],
            provenance=obj.get("provenance", []),
        )


def kmeans(
    data: DataMatrix, k: int, seed: int, max_iters: int = 100
) -> tuple[np.ndarray, AffiliationMatrix]:
    """Plain Lloyd k-means with distinct-object initialization.

    Empty clusters are re-seeded from the object farthest from its centroid.
    """
    values = data.values
    n = values.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    centroids = values[rng.choice(n, size=k, replace=False)].copy()
    assignments = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iters):
        dists = ((values[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assignments = np.argmin(dists, axis=1)
        counts = np.bincount(new_assignments, minlength=k)
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            own = dists[np.arange(n), new_assignments]
            for j in empties:
                far = int(np.argmax(own))
                new_assignments[far] = j
                own[far] = -np.inf
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for j in range(k):
            members = values[assignments == j]
            if members.shape[0]:
                centroids[j] = members.mean(axis=0)
    return centroids, AffiliationMatrix(assignments, k=k)


def _auto_fragments(cluster_size: int, client_count: int) -> int:
    return max(2, min(client_count, cluster_size // 20))


def fragment_partition(data: DataMatrix, config: FederationConfig) -> PartitionPlan:
    """Split every ground-truth cluster into clusterlets and scatter them.

    Each cluster is fragmented with k-means (``fragments_per_cluster``
    pieces, clipped to the cluster size; 'auto' picks
    max(2, min(L, size // 20))), and every fragment lands on one uniformly
    random client.
    """
    if data.labels is None:
        raise ValueError("fragmentation needs ground-truth labels")
    rng = np.random.default_rng(config.seed)
    per_client: list[list[np.ndarray]] = [[] for _ in range(config.client_count)]
    provenance: list[dict] = []
    for label in np.unique(data.labels):
        cluster_idx = np.flatnonzero(data.labels == label)
        if config.fragments_per_cluster == "auto":
            k = _auto_fragments(cluster_idx.size, config.client_count)
        else:
            k = int(config.fragments_per_cluster)
        k = min(k, cluster_idx.size)
        _, affil = kmeans(
            data.subset(cluster_idx), k, seed=int(rng.integers(2**32))
        )
        for fragment in range(k):
            members = cluster_idx[affil.assignments == fragment]
            client = int(rng.integers(config.client_count))
            per_client[client].append(members)
            provenance.append(
                {
                    "cluster_label": int(label),
                    "fragment": fragment,
                    "client_id": client,
                    "object_indices": members.tolist(),
                }
            )
    client_indices = [
        np.sort(np.concatenate(parts)) if parts else np.empty(0, np.int64)
        for parts in per_client
    ]
    return PartitionPlan(client_indices=client_indices, provenance=provenance)


def client_seed(master_seed: int, client_id: int) -> int:
    """Per-client seed: master XOR client id (no cross-client state)."""
    return master_seed ^ client_id


def mcpl_seed(master_seed: int) -> int:
    return int(
        np.random.SeedSequence(entropy=master_seed, spawn_key=(0x6D63,)).generate_state(1)[0]
    )


def final_seed(master_seed: int) -> int:
    return int(
        np.random.SeedSequence(entropy=master_seed, spawn_key=(0xF1A1,)).generate_state(1)[0]
    )


@dataclass
class ExperimentResult:
    """Everything one simulated one-shot run produced."""

    plan: PartitionPlan
    hierarchy: Hierarchy
    global_clustering: GlobalClustering
    object_labels: np.ndarray
    payload_count: int
    communicated_values: int
    client_ks: dict[int, int]
    skipped_clients: list[int]
    unassigned_count: int
    timings: dict[str, float]

    @property
    def hierarchy_ks(self) -> list[int]:
        return self.hierarchy.level_ks

    def report_json(self) -> str:
        """Hierarchy + final partition in one report document."""
        rep = encode_hierarchy(self.hierarchy)
        gc = self.global_clustering
        return json.dumps(
            {
                "levels": [
                    {"k": k, "assignments": q.assignments.tolist()}
                    for k, q in self.hierarchy.levels
                ],
                "codes": rep.codes.tolist(),
                "U": gc.U.entries.tolist(),
                "server_assignments": gc.server_assignments.assignments.tolist(),
                "object_assignments": {
                    str(cid): labels.tolist()
                    for cid, labels in sorted((gc.object_assignments or {}).items())
                },
            }
        )


def run_one_shot(
    data: DataMatrix,
    config: FederationConfig,
    plan: PartitionPlan | None = None,
) -> ExperimentResult:
    """Run the whole pipeline with exactly one upload per client.

    Partitions the data (unless a plan is supplied), runs each client's
    local clustering exactly once, stacks the uploaded centroids and drives
    the server stages. Client seeds derive from the master seed so results
    are identical with and without client parallelism.
    """
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    if plan is None:
        plan = fragment_partition(data, config)
    if plan.client_count != config.client_count:
        raise ValueError(
            f"plan covers {plan.client_count} clients, config says "
            f"{config.client_count}"
        )
    timings["partition"] = time.perf_counter() - t0

    def one_client(cid: int):
        indices = plan.client_indices[cid]
        if indices.size == 0:
            return cid, None
        outcome = run_fcpl(
            data.subset(indices),
            eta=config.eta,
            k0_fraction=config.k0_fraction,
            seed=client_seed(config.seed, cid),
            client_id=cid,
            max_epochs=config.max_epochs,
            k0_override=config.k0_absolute,
        )
        return cid, outcome

    t0 = time.perf_counter()
    ids = list(range(config.client_count))
    if config.parallel_clients:
        with ThreadPoolExecutor() as pool:
            outcomes = dict(pool.map(one_client, ids))
    else:
        outcomes = dict(map(one_client, ids))
    timings["clients"] = time.perf_counter() - t0

    client_results: dict[int, CplResult] = {}
    payloads: list[ClientPayload] = []
    skipped: list[int] = []
    for cid in ids:
        outcome = outcomes[cid]
        if outcome is None:
            skipped.append(cid)
            continue
        result, payload = outcome
        client_results[cid] = result
        payloads.append(payload)
    if not payloads:
        raise ExperimentError("all clients were skipped; nothing to aggregate")
    if skipped:
        logger.warning("%d client(s) skipped: %s", len(skipped), skipped)

    t0 = time.perf_counter()
    stacked, provenance = stack_payloads(payloads)
    timings["upload"] = time.perf_counter() - t0
    communicated = sum(p.centroids.size for p in payloads)

    t0 = time.perf_counter()
    hierarchy = run_mcpl(
        stacked,
        eta=config.eta,
        k0_fraction=config.k0_fraction,
        seed=mcpl_seed(config.seed),
        max_epochs=config.max_epochs,
        min_finest=config.k_star,
    )
    timings["mcpl"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    rep = encode_hierarchy(hierarchy)
    timings["encode"] = time.perf_counter() - t0

    if config.k_star > rep.object_count:
        raise ExperimentError(
            f"k_star={config.k_star} exceeds the {rep.object_count} stacked "
            f"clusterlet centroids"
        )
    t0 = time.perf_counter()
    global_clustering = final_clustering(
        rep, k_star=config.k_star, seed=final_seed(config.seed)
    )
    timings["final"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    per_client = propagate_labels(global_clustering, provenance, client_results)
    global_clustering.object_assignments = per_client
    object_labels = np.full(data.object_count, UNASSIGNED, dtype=np.int64)
    for cid, labels in per_client.items():
        object_labels[plan.client_indices[cid]] = labels
    unassigned = int((object_labels == UNASSIGNED).sum())
    if unassigned:
        logger.warning("%d object(s) unassigned (skipped clients)", unassigned)
    timings["propagate"] = time.perf_counter() - t0

    return ExperimentResult(
        plan=plan,
        hierarchy=hierarchy,
        global_clustering=global_clustering,
        object_labels=object_labels,
        payload_count=len(payloads),
        communicated_values=communicated,
        client_ks={cid: r.converged_k for cid, r in client_results.items()},
        skipped_clients=skipped,
        unassigned_count=unassigned,
        timings=timings,
    )
