"""Client side of the federation: local clusterlet discovery and the upload payload."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import DataMatrix
from .cpl import CplConfig, CplResult, run_cpl

logger = logging.getLogger(__name__)

MIN_CLIENT_OBJECTS = 4


@dataclass
class ClientPayload:
    """The one thing a client uploads: its surviving clusterlet centroids.

    Raw objects and affiliation rows never leave the client. Clusterlet
    sizes are an opt-in extra for ablation studies and excluded by default.
    """

    client_id: int
    centroids: np.ndarray
    clusterlet_sizes: np.ndarray | None = None

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise ValueError("payload needs at least one centroid row")
        if not np.isfinite(self.centroids).all():
            raise ValueError("payload centroids must be finite")

    @property
    def clusterlet_count(self) -> int:
        return self.centroids.shape[0]

    def to_json(self) -> str:
        obj = {"client_id": self.client_id, "centroids": self.centroids.tolist()}
        if self.clusterlet_sizes is not None:
            obj["clusterlet_sizes"] = [int(s) for s in self.clusterlet_sizes]
        return json.dumps(obj)

    @classmethod
    def from_json(cls, text: str) -> "ClientPayload":
        obj = json.loads(text)
        sizes = obj.get("clusterlet_sizes")
        return cls(
            client_id=int(obj["client_id"]),
            centroids=np.asarray(obj["centroids"], dtype=np.float64),
            clusterlet_sizes=None if sizes is None else np.asarray(sizes, np.int64),
        )


def fcpl_k0(n: int, k0_fraction: float) -> int:
    """Initial clusterlet count for a client: max(2, ceil(fraction * n))."""
    return min(n, max(2, math.ceil(k0_fraction * n)))


def run_fcpl(
    local_data: DataMatrix,
    eta: float,
    k0_fraction: float,
    seed: int,
    client_id: int = 0,
    max_epochs: int | None = None,
    k0_override: int | None = None,
    include_sizes: bool = False,
) -> tuple[CplResult, ClientPayload] | None:
    """Run fine-grained competitive learning on one client's private data.

    Returns the local result plus the centroid payload, or None when the
    client is too small to participate (fewer than 4 objects), in which
    case it is skipped with a warning rather than failing the federation.

    ``k0_override`` forces an absolute initial clusterlet count (used by
    the scaling benchmark); otherwise k0 = max(2, ceil(k0_fraction * n)).
    """
    n = local_data.object_count
    if n < MIN_CLIENT_OBJECTS:
        logger.warning(
            "client %d skipped: %d object(s) is below the minimum of %d",
            client_id,
            n,
            MIN_CLIENT_OBJECTS,
        )
        return None
    k0 = min(n, k0_override) if k0_override is not None else fcpl_k0(n, k0_fraction)
    kwargs = {} if max_epochs is None else {"max_epochs": max_epochs}
    config = CplConfig(eta=eta, k0=k0, rng_seed=seed, **kwargs)
    result = run_cpl(local_data, config, weighting=True)
    sizes = result.affiliation.counts() if include_sizes else None
    payload = ClientPayload(
        client_id=client_id,
        centroids=result.clusterlets.centroids.copy(),
        clusterlet_sizes=sizes,
    )
    return result, payload
