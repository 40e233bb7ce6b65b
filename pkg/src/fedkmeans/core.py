"""Domain types, consensus-topology algebra, big-M values, and instance I/O.

A problem instance holds the per-node observation sets plus the global data
bounding box.  The linear-chain consensus constraints (centroids of node i
equal those of node i+1) are applied structurally through
:func:`apply_coupling` / :func:`apply_coupling_adjoint`; the stacked coupling
matrix is never materialized outside of test oracles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "BoundingBox",
    "ConsensusTopology",
    "NodeDataset",
    "ProblemInstance",
    "apply_coupling",
    "apply_coupling_adjoint",
    "build_consensus_topology",
    "compute_big_m",
    "primal_residual",
    "read_instance",
    "write_instance",
]


@dataclass(frozen=True)
class NodeDataset:
    """Observations held by a single node (rows of ``observations``)."""

    node_id: int
    observations: np.ndarray  # (n_points, n_y), row-major, immutable

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim != 2 or obs.shape[0] == 0:
            raise ValueError(f"node {self.node_id}: observations must be a non-empty 2-D array")
        if not np.isfinite(obs).all():
            raise ValueError(f"node {self.node_id}: non-finite observation coordinates")
        obs.setflags(write=False)
        object.__setattr__(self, "observations", obs)

    @property
    def n_points(self) -> int:
        return self.observations.shape[0]

    @property
    def n_y(self) -> int:
        return self.observations.shape[1]


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box containing the union of all node data."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lo and hi must be 1-D vectors of equal length")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("non-finite box bounds")
        if np.any(lo > hi):
            raise ValueError("box requires lo <= hi component-wise")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def n_y(self) -> int:
        return self.lo.shape[0]

    def contains(self, point: np.ndarray, atol: float = 1e-12) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lo - atol) and np.all(p <= self.hi + atol))

    @staticmethod
    def of_data(arrays) -> "BoundingBox":
        """Component-wise envelope of per-node min/max bounds.

        Only 2*n_y scalars per node are needed, so a coordinator can build the
        global box without ever seeing raw observations.
        """
        los = [np.min(a, axis=0) for a in arrays]
        his = [np.max(a, axis=0) for a in arrays]
        return BoundingBox(np.min(los, axis=0), np.max(his, axis=0))


def compute_big_m(y: np.ndarray, box: BoundingBox) -> float:
    """Largest squared distance from ``y`` to any point of the box.

    The maximum of the convex squared distance over a box separates per
    dimension and is attained at a corner, so it is
    ``sum_l max((y_l-lo_l)^2, (y_l-hi_l)^2)``.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != box.lo.shape:
        raise ValueError("dimension mismatch between observation and box")
    if not box.contains(y):
        raise ValueError("observation lies outside the bounding box")
    return float(np.sum(np.maximum((y - box.lo) ** 2, (y - box.hi) ** 2)))


@dataclass(frozen=True)
class ProblemInstance:
    """A federated clustering instance: K, per-node data, box, and big-M."""

    name: str
    K: int
    n_y: int
    nodes: tuple[NodeDataset, ...]
    box: BoundingBox
    big_m: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("K must be at least 2")
        if len(self.nodes) < 2:
            raise ValueError("an instance needs at least 2 nodes")
        object.__setattr__(self, "nodes", tuple(self.nodes))
        for node in self.nodes:
            if node.n_y != self.n_y:
                raise ValueError(f"node {node.node_id} dimension {node.n_y} != n_y={self.n_y}")
            for y in node.observations:
                if not self.box.contains(y):
                    raise ValueError(f"node {node.node_id}: observation outside the box")
        if not self.big_m:
            object.__setattr__(self, "big_m", {
                node.node_id: np.array([compute_big_m(y, self.box) for y in node.observations])
                for node in self.nodes
            })

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_points(self) -> int:
        return sum(node.n_points for node in self.nodes)

    def merged_observations(self) -> np.ndarray:
        """Union of all node data, in node order (central baseline only)."""
        return np.vstack([node.observations for node in self.nodes])


@dataclass(frozen=True)
class ConsensusTopology:
    """Linear-chain coupling: centroids of node i equal those of node i+1.

    Coupling block b (b = 0..N_s-2) is the constraint m_hat_b - m_hat_{b+1} = 0.
    The dual vector is laid out block-major: (coupling block, cluster, dimension).
    """

    n_nodes: int
    K: int
    n_y: int

    def __post_init__(self):
        if self.n_nodes < 2 or self.K < 1 or self.n_y < 1:
            raise ValueError("require N_s >= 2, K >= 1, n_y >= 1")

    @property
    def block_size(self) -> int:
        return self.K * self.n_y

    @property
    def n_blocks(self) -> int:
        return self.n_nodes - 1

    @property
    def dual_dim(self) -> int:
        return self.block_size * self.n_blocks

    def dense_matrix(self) -> np.ndarray:
        """Stacked coupling matrix A; test oracle only, never used in solves."""
        b = self.block_size
        A = np.zeros((self.dual_dim, b * self.n_nodes))
        eye = np.eye(b)
        for blk in range(self.n_blocks):
            A[blk * b:(blk + 1) * b, blk * b:(blk + 1) * b] = eye
            A[blk * b:(blk + 1) * b, (blk + 1) * b:(blk + 2) * b] = -eye
        return A


def build_consensus_topology(n_nodes: int, K: int, n_y: int) -> ConsensusTopology:
    return ConsensusTopology(n_nodes=n_nodes, K=K, n_y=n_y)


def apply_coupling(topology: ConsensusTopology, i: int, m_hat: np.ndarray) -> np.ndarray:
    """Return A_i m_hat_i: node i's contribution to the consensus residual."""
    m = np.asarray(m_hat, dtype=float).ravel()
    b = topology.block_size
    if m.shape[0] != b:
        raise ValueError(f"stacked centroid vector must have length {b}")
    if not 0 <= i < topology.n_nodes:
        raise ValueError(f"node index {i} out of range")
    out = np.zeros(topology.dual_dim)
    if i < topology.n_blocks:
        out[i * b:(i + 1) * b] = m
    if i > 0:
        out[(i - 1) * b:i * b] -= m
    return out


def apply_coupling_adjoint(topology: ConsensusTopology, i: int, lam: np.ndarray) -> np.ndarray:
    """Return c_i = A_i^T lambda, the linear term of node i's Lagrangian."""
    lam = np.asarray(lam, dtype=float).ravel()
    b = topology.block_size
    if lam.shape[0] != topology.dual_dim:
        raise ValueError(f"dual vector must have length {topology.dual_dim}")
    if not 0 <= i < topology.n_nodes:
        raise ValueError(f"node index {i} out of range")
    out = np.zeros(b)
    if i < topology.n_blocks:
        out += lam[i * b:(i + 1) * b]
    if i > 0:
        out -= lam[(i - 1) * b:i * b]
    return out


def primal_residual(topology: ConsensusTopology, centroid_sets) -> tuple[np.ndarray, float]:
    """Consensus violation w_p = sum_i A_i m_hat_i and its Euclidean norm."""
    sets = list(centroid_sets)
    if len(sets) != topology.n_nodes:
        raise ValueError("need one centroid set per node")
    w = np.zeros(topology.dual_dim)
    for i, m in enumerate(sets):
        w += apply_coupling(topology, i, np.asarray(m, dtype=float).ravel())
    return w, float(np.linalg.norm(w))


# ------------------------------- serialization ------------------------------


def _instance_to_dict(instance: ProblemInstance) -> dict:
    return {
        "name": instance.name,
        "K": instance.K,
        "n_y": instance.n_y,
        "nodes": [
            {"node_id": node.node_id, "observations": node.observations.tolist()}
            for node in instance.nodes
        ],
        "box": {"lo": instance.box.lo.tolist(), "hi": instance.box.hi.tolist()},
        "big_m": {str(nid): np.asarray(m).tolist() for nid, m in instance.big_m.items()},
    }


def write_instance(instance: ProblemInstance, path) -> None:
    Path(path).write_text(json.dumps(_instance_to_dict(instance), indent=1), encoding="utf-8")


def read_instance(path) -> ProblemInstance:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed instance file {path}: {exc}") from exc
    return instance_from_dict(raw)


def instance_from_dict(raw: dict) -> ProblemInstance:
    try:
        nodes = tuple(
            NodeDataset(node_id=int(n["node_id"]), observations=np.array(n["observations"], dtype=float))
            for n in raw["nodes"]
        )
        box = BoundingBox(np.array(raw["box"]["lo"], dtype=float), np.array(raw["box"]["hi"], dtype=float))
        big_m = {int(k): np.array(v, dtype=float) for k, v in raw.get("big_m", {}).items()}
        instance = ProblemInstance(
            name=str(raw["name"]), K=int(raw["K"]), n_y=int(raw["n_y"]),
            nodes=nodes, box=box, big_m=big_m,
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed instance payload: {exc}") from exc
    for node in instance.nodes:
        expected = np.array([compute_big_m(y, instance.box) for y in node.observations])
        stored = instance.big_m.get(node.node_id)
        if stored is None or stored.shape != expected.shape or not np.allclose(stored, expected, rtol=0, atol=1e-9):
            raise ValueError(f"big_m values for node {node.node_id} are missing or inconsistent")
    return instance


def instance_to_dict(instance: ProblemInstance) -> dict:
    return _instance_to_dict(instance)
