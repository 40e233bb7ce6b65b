"""Dual-decomposition run loop, averaging heuristic, and central baseline.

One iteration follows the four-step coordinator/node exchange: (1) send each
node its dual linear coefficients, (2) collect exact subproblem solutions and
form the dual value and subgradient, (3) broadcast the average centroids,
(4) collect the per-node primal objectives and the resulting duality gap.
All dual values are exact subproblem minima, so every reported duality gap is
a certificate; an inexact node solve aborts the run.
"""

from __future__ import annotations

import csv
import hashlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import ProblemInstance, apply_coupling, apply_coupling_adjoint, build_consensus_topology
from .master import Bundle, BundleEntry, HessianApprox, bfgs_update, btm_direction, bundle_push, qnda_update, sg_update, step_size
from .subsolver import LagrangianSubproblem, NodeLimitExceeded, SubproblemSolution, relabel_to_reference, solve_subproblem

__all__ = [
    "ALGORITHMS",
    "CentralResult",
    "InProcessBackend",
    "IterationRecord",
    "NodeSolveReply",
    "RunAborted",
    "RunConfig",
    "RunResult",
    "central_solve",
    "modeled_computation_time",
    "perform_node_solve",
    "relative_duality_gap",
    "run",
    "write_run_csv",
]

ALGORITHMS = ("sg", "btm", "qnda")


@dataclass(frozen=True)
class RunConfig:
    """Algorithm selection plus the standard parameter set.

    Defaults: zero initial duals, alpha0 = 0.5 with alpha0/sqrt(t) decay,
    at most 150 iterations, primal residual tolerance 1e-2, duality-gap
    tolerance 0.25 %, bundle capacity 50, initial curvature -I, and a
    constant 800 ms modeled communication time per iteration.
    """

    algorithm: str = "qnda"
    alpha0: float = 0.5
    t_max: int = 150
    eps_primal: float = 1e-2
    eps_dg: float = 0.25            # percent
    tau: int = 50
    t_comm: float = 0.8             # seconds
    rel_tol: float = 1e-9
    max_nodes: int = 5_000_000
    lloyd_starts: int = 5
    seed: int = 0
    parallel_nodes: bool = False
    lam0: np.ndarray | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if min(self.alpha0, self.t_max, self.eps_primal, self.eps_dg, self.tau, self.t_comm) <= 0:
            raise ValueError("all run parameters must be positive")


@dataclass(frozen=True)
class IterationRecord:
    t: int
    lam_hash: str
    dual_value: float
    node_lagrangians: tuple[float, ...]
    subgradient_norm: float
    mean_centroids: np.ndarray          # (K, n_y)
    node_objectives: tuple[float, ...]
    primal_value: float
    rel_duality_gap: float              # percent
    residual_norm: float
    t_update: float
    t_sub_max: float
    t_model_increment: float
    lam: np.ndarray = field(repr=False, default=None)
    subgradient: np.ndarray = field(repr=False, default=None)

    def numeric_key(self) -> tuple:
        """Bit-exact numeric fields, excluding wall-clock timings."""
        return (
            self.t, self.lam_hash, self.dual_value, self.node_lagrangians,
            self.subgradient_norm, tuple(map(tuple, self.mean_centroids.tolist())),
            self.node_objectives, self.primal_value, self.rel_duality_gap,
            self.residual_norm,
        )


@dataclass(frozen=True)
class RunResult:
    records: tuple[IterationRecord, ...]
    termination: str                    # residual | duality_gap | max_iter
    best_primal_value: float
    best_primal_centroids: np.ndarray
    final_dual_value: float
    modeled_t_comp: float


class RunAborted(RuntimeError):
    """A node failed, timed out, or could not solve exactly; partial records attached."""

    def __init__(self, message: str, records: tuple[IterationRecord, ...] = ()):
        super().__init__(message)
        self.records = records


def relative_duality_gap(dual_value: float, primal_value: float) -> float:
    """Percent gap 100 * (1 - dual/primal)."""
    if primal_value <= 0:
        raise ValueError("primal value must be positive")
    return 100.0 * (1.0 - dual_value / primal_value)


def modeled_computation_time(records, t_comm: float = 0.8) -> float:
    """N_iter * T_comm + sum over iterations of (T_update + max node solve time)."""
    records = list(records)
    if not records:
        raise ValueError("no iteration records")
    return len(records) * t_comm + sum(r.t_update + r.t_sub_max for r in records)


# ------------------------------ node backends --------------------------------


@dataclass(frozen=True)
class NodeSolveReply:
    centroids: np.ndarray       # (K, n_y)
    lagrangian_value: float
    solve_time: float


def derive_node_seed(seed: int, node_id: int, t: int) -> int:
    """Deterministic per-(run, node, iteration) seed for the Lloyd incumbent."""
    return (seed * 1_000_003 + node_id * 10_007 + t) % (2 ** 31 - 1)


def perform_node_solve(observations, K, box, c_flat, reference, *, rel_tol, max_nodes,
                       lloyd_starts, seed, node_id, t) -> NodeSolveReply:
    """Node-side exact subproblem solve shared by all backends."""
    from .core import NodeDataset

    data = NodeDataset(node_id=node_id, observations=np.asarray(observations, dtype=float))
    c = np.asarray(c_flat, dtype=float).reshape(K, data.n_y)
    sub = LagrangianSubproblem(data=data, K=K, box=box, c=c)
    started = time.perf_counter()
    solution = solve_subproblem(
        sub, rel_tol=rel_tol, max_nodes=max_nodes,
        lloyd_starts=lloyd_starts, lloyd_seed=derive_node_seed(seed, node_id, t),
    )
    if reference is not None:
        solution = relabel_to_reference(solution, np.asarray(reference, dtype=float), sub)
    return NodeSolveReply(
        centroids=solution.centroids,
        lagrangian_value=solution.lagrangian_value,
        solve_time=time.perf_counter() - started,
    )


def compute_node_objective(observations, mean_centroids) -> float:
    """z_i: cost of the node's local data under the averaged centroids."""
    Y = np.asarray(observations, dtype=float)
    M = np.asarray(mean_centroids, dtype=float)
    d2 = np.sum((Y[:, None, :] - M[None, :, :]) ** 2, axis=2)
    return float(np.sum(np.min(d2, axis=1)))


class InProcessBackend:
    """Runs node subproblems in the coordinator process."""

    def __init__(self, instance: ProblemInstance, config: RunConfig):
        self.instance = instance
        self.config = config
        self._pool = ThreadPoolExecutor(max_workers=instance.n_nodes) if config.parallel_nodes else None

    def solve_batch(self, t, c_list, reference, node_indices) -> list[NodeSolveReply]:
        cfg = self.config

        def solve_one(i):
            node = self.instance.nodes[i]
            return perform_node_solve(
                node.observations, self.instance.K, self.instance.box, c_list[i], reference,
                rel_tol=cfg.rel_tol, max_nodes=cfg.max_nodes, lloyd_starts=cfg.lloyd_starts,
                seed=cfg.seed, node_id=node.node_id, t=t,
            )

        if self._pool is not None:
            return list(self._pool.map(solve_one, node_indices))
        return [solve_one(i) for i in node_indices]

    def objective_batch(self, t, mean_centroids) -> list[float]:
        return [compute_node_objective(node.observations, mean_centroids) for node in self.instance.nodes]

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()


# --------------------------------- run loop ----------------------------------


def _lam_hash(lam: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(lam, dtype=float).tobytes()).hexdigest()[:16]


def run(instance: ProblemInstance, config: RunConfig, backend=None) -> RunResult:
    """Full dual-decomposition run; returns per-iteration records and the best primal."""
    topology = build_consensus_topology(instance.n_nodes, instance.K, instance.n_y)
    own_backend = backend is None
    if backend is None:
        backend = InProcessBackend(instance, config)

    lam = np.zeros(topology.dual_dim) if config.lam0 is None else np.asarray(config.lam0, dtype=float).copy()
    if lam.shape[0] != topology.dual_dim:
        raise ValueError(f"lam0 must have length {topology.dual_dim}")

    bundle = Bundle(capacity=config.tau)
    B = HessianApprox.initial(topology.dual_dim).B
    prev_lam = prev_g = None
    records: list[IterationRecord] = []
    termination = "max_iter"
    best_primal = np.inf
    best_centroids = None

    try:
        for t in range(1, config.t_max + 1):
            c_list = [apply_coupling_adjoint(topology, i, lam) for i in range(instance.n_nodes)]

            # Iteration 1: node 0 solves first and provides the reference
            # centroids used to break label symmetry at the other nodes.
            if t == 1:
                first = backend.solve_batch(t, c_list, None, [0])[0]
                reference = first.centroids
                rest = backend.solve_batch(t, c_list, reference, list(range(1, instance.n_nodes)))
                replies = [first] + rest
            else:
                replies = backend.solve_batch(t, c_list, None, list(range(instance.n_nodes)))

            dual_value = float(sum(r.lagrangian_value for r in replies))
            g = np.zeros(topology.dual_dim)
            for i, r in enumerate(replies):
                g += apply_coupling(topology, i, r.centroids.ravel())
            residual_norm = float(np.linalg.norm(g))

            mean_centroids = np.mean([r.centroids for r in replies], axis=0)
            z = backend.objective_batch(t, mean_centroids)
            primal_value = float(sum(z))
            rel_dg = relative_duality_gap(dual_value, primal_value)

            if primal_value < best_primal:
                best_primal = primal_value
                best_centroids = mean_centroids

            stop = None
            if residual_norm < config.eps_primal:
                stop = "residual"
            elif rel_dg <= config.eps_dg:
                stop = "duality_gap"
            elif t == config.t_max:
                stop = "max_iter"

            t_update = 0.0
            if stop is None:
                started = time.perf_counter()
                alpha_t = step_size(config.alpha0, t)
                if config.algorithm == "sg":
                    new_lam = sg_update(lam, g, alpha_t)
                elif config.algorithm == "btm":
                    bundle = bundle_push(bundle, BundleEntry(t, lam.copy(), g.copy(), dual_value))
                    s, _ = btm_direction(bundle, lam, dual_value, alpha_t)
                    new_lam = lam + s
                else:  # qnda
                    if prev_lam is not None:
                        B = bfgs_update(B, lam - prev_lam, g - prev_g)
                    bundle = bundle_push(bundle, BundleEntry(t, lam.copy(), g.copy(), dual_value))
                    new_lam = qnda_update(B, bundle, lam, g, dual_value, alpha_t)
                t_update = time.perf_counter() - started

            t_sub_max = max(r.solve_time for r in replies)
            records.append(IterationRecord(
                t=t,
                lam_hash=_lam_hash(lam),
                dual_value=dual_value,
                node_lagrangians=tuple(r.lagrangian_value for r in replies),
                subgradient_norm=residual_norm,
                mean_centroids=mean_centroids,
                node_objectives=tuple(z),
                primal_value=primal_value,
                rel_duality_gap=rel_dg,
                residual_norm=residual_norm,
                t_update=t_update,
                t_sub_max=t_sub_max,
                t_model_increment=config.t_comm + t_update + t_sub_max,
                lam=lam.copy(),
                subgradient=g.copy(),
            ))

            if stop is not None:
                termination = stop
                break
            prev_lam, prev_g = lam, g
            lam = new_lam
    except NodeLimitExceeded as exc:
        raise RunAborted(f"exact subproblem solve failed: {exc}", tuple(records)) from exc
    except RunAborted:
        raise
    except RuntimeError as exc:
        # Backend failures (for example a dropped network connection) abort
        # the run but keep the records accumulated so far.
        raise RunAborted(f"node backend failed: {exc}", tuple(records)) from exc
    finally:
        if own_backend:
            backend.close()

    return RunResult(
        records=tuple(records),
        termination=termination,
        best_primal_value=best_primal,
        best_primal_centroids=best_centroids,
        final_dual_value=max(r.dual_value for r in records),
        modeled_t_comp=modeled_computation_time(records, config.t_comm),
    )


CSV_COLUMNS = ("t", "dual", "primal", "rel_dg_percent", "residual_norm",
               "t_update_s", "t_sub_max_s", "t_model_cum_s")


def write_run_csv(records, path, t_comm: float = 0.8) -> None:
    """Per-iteration CSV with the fixed column order."""
    cum = 0.0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            cum += t_comm + r.t_update + r.t_sub_max
            writer.writerow([r.t, repr(r.dual_value), repr(r.primal_value),
                             repr(r.rel_duality_gap), repr(r.residual_norm),
                             repr(r.t_update), repr(r.t_sub_max), repr(cum)])


# ----------------------------- central baseline ------------------------------


@dataclass(frozen=True)
class CentralResult:
    solution: SubproblemSolution
    # Trace rows: (wall_time_s, incumbent_value, lower_bound, rel_gap_percent)
    trace: tuple[tuple[float, float, float, float], ...]


def central_solve(instance: ProblemInstance, time_budget: float | None = None,
                  rel_tol: float = 1e-9, max_nodes: int = 5_000_000) -> CentralResult:
    """Branch-and-bound on the merged data (zero duals): the central baseline.

    Emits an incumbent/bound trace comparable against the distributed duality
    gap.  If the time budget runs out the final entry carries the proven gap
    at that point.
    """
    from .core import NodeDataset

    merged = NodeDataset(node_id=0, observations=instance.merged_observations())
    sub = LagrangianSubproblem(
        data=merged, K=instance.K, box=instance.box,
        c=np.zeros((instance.K, instance.n_y)),
    )
    trace: list[tuple[float, float, float, float]] = []

    def on_progress(elapsed, incumbent, bound):
        ub = incumbent.lagrangian_value
        gap = 100.0 * max(0.0, ub - bound) / max(abs(ub), 1e-9)
        trace.append((elapsed, ub, bound, gap))

    solution = solve_subproblem(sub, rel_tol=rel_tol, max_nodes=max_nodes,
                                time_budget=time_budget, on_progress=on_progress)
    return CentralResult(solution=solution, trace=tuple(trace))
