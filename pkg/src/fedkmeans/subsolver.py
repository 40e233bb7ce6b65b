"""Exact solver for one node's Lagrangian clustering subproblem.

For a fixed assignment of observations to clusters the continuous part of the
subproblem separates per cluster and per dimension, so the optimal
box-constrained centroid has a closed form.  The solver therefore
branch-and-bounds over assignments only: best-first search, branching on the
cluster of the next unassigned observation (observations ordered by decreasing
distance from the data mean), pruning against a Lloyd-style incumbent.  A full
enumeration oracle is provided for testing.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import BoundingBox, NodeDataset

__all__ = [
    "LagrangianSubproblem",
    "NodeLimitExceeded",
    "SubproblemSolution",
    "assignment_lower_bound",
    "brute_force_subproblem",
    "closed_form_centroid",
    "evaluate_assignment",
    "lloyd_incumbent",
    "relabel_to_reference",
    "solve_subproblem",
]


@dataclass(frozen=True)
class LagrangianSubproblem:
    """One node's clustering problem plus the dual linear term.

    ``c`` has shape (K, n_y); cluster k's objective contribution is
    sum_{j in C_k} ||y_j - m_k||^2 + c_k . m_k with m_k constrained to the box.
    """

    data: NodeDataset
    K: int
    box: BoundingBox
    c: np.ndarray
    reference: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if c.shape != (self.K, self.data.n_y):
            raise ValueError(f"c must have shape ({self.K}, {self.data.n_y})")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)
        if self.reference is not None:
            ref = np.asarray(self.reference, dtype=float)
            if ref.shape != (self.K, self.data.n_y):
                raise ValueError("reference centroids must have shape (K, n_y)")
            object.__setattr__(self, "reference", ref)


@dataclass(frozen=True)
class SubproblemSolution:
    assignment: tuple[int, ...]
    centroids: np.ndarray               # (K, n_y)
    distances: np.ndarray               # squared distance to the assigned centroid
    lagrangian_value: float             # cluster_cost + sum_k c_k . m_k
    cluster_cost: float                 # sum of assigned squared distances
    proof_gap: float                    # relative branch-and-bound gap
    stats: dict = field(default_factory=dict)


class NodeLimitExceeded(RuntimeError):
    """Raised when branch-and-bound hits its node cap before proving optimality."""

    def __init__(self, incumbent: SubproblemSolution, lower_bound: float, explored: int):
        super().__init__(
            f"node limit reached after {explored} nodes "
            f"(incumbent {incumbent.lagrangian_value:.6g}, bound {lower_bound:.6g})"
        )
        self.incumbent = incumbent
        self.lower_bound = lower_bound
        self.explored = explored


def closed_form_centroid(points: np.ndarray, c_k: np.ndarray, box: BoundingBox):
    """Optimal box-constrained centroid for one cluster and its objective.

    Non-empty cluster: the objective is a separable convex quadratic per
    dimension, so the unconstrained minimizer (sum(y) - c/2) / n clipped to the
    box is optimal.  Empty cluster: the objective is linear, minimized at a
    box corner (midpoint where the coefficient vanishes).
    """
    c_k = np.asarray(c_k, dtype=float)
    points = np.asarray(points, dtype=float).reshape(-1, c_k.shape[0])
    n = points.shape[0]
    if n == 0:
        m, value = _empty_cluster_min(c_k, box.lo, box.hi)
        return m, value
    s = points.sum(axis=0)
    q = float(np.sum(points * points))
    m, value = _cluster_min(n, s, q, c_k, box.lo, box.hi)
    return m, value


def _empty_cluster_min(c_k, lo, hi):
    m = np.where(c_k > 0, lo, np.where(c_k < 0, hi, 0.5 * (lo + hi)))
    return m, float(c_k @ m)


def _cluster_min(n, s, q, c_k, lo, hi):
    """Minimum of n*|m|^2 - 2 s.m + q + c.m over the box, with its argmin."""
    m = np.clip((s - 0.5 * c_k) / n, lo, hi)
    value = q + float(n * (m @ m) - 2.0 * (s @ m) + c_k @ m)
    return m, value


def evaluate_assignment(subproblem: LagrangianSubproblem, assignment) -> SubproblemSolution:
    """Exact solution value of a complete assignment via closed-form centroids."""
    assignment = tuple(int(a) for a in assignment)
    Y = subproblem.data.observations
    K, n_y = subproblem.K, subproblem.data.n_y
    if len(assignment) != Y.shape[0]:
        raise ValueError("assignment length must match the number of observations")
    if any(not 0 <= a < K for a in assignment):
        raise ValueError("assignment labels out of range")
    centroids = np.zeros((K, n_y))
    labels = np.asarray(assignment)
    cluster_cost = 0.0
    linear_cost = 0.0
    for k in range(K):
        pts = Y[labels == k]
        m_k, _ = closed_form_centroid(pts, subproblem.c[k], subproblem.box)
        centroids[k] = m_k
        cluster_cost += float(np.sum((pts - m_k) ** 2))
        linear_cost += float(subproblem.c[k] @ m_k)
    distances = np.sum((Y - centroids[labels]) ** 2, axis=1)
    return SubproblemSolution(
        assignment=assignment,
        centroids=centroids,
        distances=distances,
        lagrangian_value=cluster_cost + linear_cost,
        cluster_cost=cluster_cost,
        proof_gap=0.0,
        stats={"explored": 0},
    )


def assignment_lower_bound(subproblem: LagrangianSubproblem, partial_assignment) -> float:
    """Valid lower bound on every completion of a prefix assignment.

    Unassigned observations contribute nothing; assigned ones contribute the
    box-constrained closed-form minimum per cluster.  Assigning more points can
    only increase each cluster's minimum, so bounds grow monotonically down the
    search tree.
    """
    Y = subproblem.data.observations
    labels = np.asarray([int(a) for a in partial_assignment])
    bound = 0.0
    for k in range(subproblem.K):
        pts = Y[:len(labels)][labels == k] if len(labels) else Y[:0]
        _, value = closed_form_centroid(pts, subproblem.c[k], subproblem.box)
        bound += value
    return bound


def lloyd_incumbent(subproblem: LagrangianSubproblem, n_starts: int = 5, seed: int = 0) -> SubproblemSolution:
    """Multi-start Lloyd iteration; a feasible upper bound for branch-and-bound.

    The dual term does not depend on the assignment variables, so the
    assignment step uses pure squared distances; the centroid step uses the
    closed form including the dual coefficients.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    Y = subproblem.data.observations
    K = subproblem.K
    rng = np.random.default_rng(seed)
    best: SubproblemSolution | None = None
    for _ in range(n_starts):
        idx = rng.choice(Y.shape[0], size=min(K, Y.shape[0]), replace=False)
        centroids = np.array([Y[idx[k % len(idx)]] for k in range(K)], dtype=float)
        labels = None
        for _ in range(100):
            d2 = np.sum((Y[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
            new_labels = np.argmin(d2, axis=1)
            if labels is not None and np.array_equal(new_labels, labels):
                break
            labels = new_labels
            for k in range(K):
                centroids[k], _ = closed_form_centroid(Y[labels == k], subproblem.c[k], subproblem.box)
        candidate = evaluate_assignment(subproblem, labels)
        if best is None or candidate.lagrangian_value < best.lagrangian_value:
            best = candidate
    return best


_GAP_FLOOR = 1e-9  # denominator floor so a zero-cost optimum still yields gap 0


def _relative_gap(upper: float, lower: float) -> float:
    return max(0.0, upper - lower) / max(abs(upper), _GAP_FLOOR)


def solve_subproblem(
    subproblem: LagrangianSubproblem,
    rel_tol: float = 1e-9,
    max_nodes: int = 5_000_000,
    lloyd_starts: int = 5,
    lloyd_seed: int = 0,
    time_budget: float | None = None,
    on_progress=None,
) -> SubproblemSolution:
    """Proven global optimum of the node Lagrangian by best-first branch-and-bound.

    Branches on the cluster of the next unassigned observation, observations
    ordered by decreasing distance from the data mean (ties by index), and
    prunes by :func:`assignment_lower_bound`.  When all per-cluster dual
    coefficients coincide (e.g. the zero dual), cluster labels are
    interchangeable and symmetric branches are skipped.

    Raises :class:`NodeLimitExceeded` when ``max_nodes`` is hit.  A
    ``time_budget`` (seconds) instead returns the incumbent with its actual
    ``proof_gap``; ``on_progress(elapsed, incumbent, bound)`` is invoked on
    bound or incumbent improvements (used by the central baseline trace).
    """
    Y = subproblem.data.observations
    n_pts, n_y = Y.shape
    K = subproblem.K
    lo, hi = subproblem.box.lo, subproblem.box.hi
    c = subproblem.c

    order = sorted(range(n_pts), key=lambda j: (-float(np.sum((Y[j] - Y.mean(axis=0)) ** 2)), j))
    Yo = Y[order]
    ysq = np.sum(Yo * Yo, axis=1)

    symmetric = bool(np.all(c == c[0]))
    empty_min = [_empty_cluster_min(c[k], lo, hi)[1] for k in range(K)]

    incumbent = lloyd_incumbent(subproblem, n_starts=lloyd_starts, seed=lloyd_seed)
    ub = incumbent.lagrangian_value

    start = time.perf_counter()
    explored = 0
    counter = itertools.count()

    # Heap entries: (bound, tiebreak, depth, labels, counts, sums, sumsq, per_cluster_min)
    root_pc = np.array(empty_min)
    root = (float(root_pc.sum()), next(counter), 0, (),
            np.zeros(K, dtype=int), np.zeros((K, n_y)), np.zeros(K), root_pc)
    heap = [root]
    best_lb = root[0]

    def report():
        if on_progress is not None:
            on_progress(time.perf_counter() - start, incumbent, best_lb)

    report()
    while heap:
        bound, _, depth, labels, counts, sums, sumsq, pc = heapq.heappop(heap)
        if bound > best_lb:
            best_lb = bound
            report()
        if bound >= ub - rel_tol * max(abs(ub), _GAP_FLOOR):
            best_lb = max(best_lb, min(bound, ub))  # gap <= rel_tol proven
            report()
            break
        if depth == n_pts:
            if bound < ub:  # leaf bound is the exact assignment value
                full = [0] * n_pts
                for pos, lab in zip(order, labels):
                    full[pos] = lab
                incumbent = evaluate_assignment(subproblem, full)
                ub = incumbent.lagrangian_value
                report()
            continue
        explored += 1
        if explored >= max_nodes:
            raise NodeLimitExceeded(_finish(incumbent, ub, best_lb, explored), best_lb, explored)
        if time_budget is not None and time.perf_counter() - start > time_budget:
            return _finish(incumbent, ub, min(best_lb, bound), explored)
        k_cap = K if not symmetric else min(K, int(np.max(labels) + 2 if labels else 1))
        y = Yo[depth]
        for k in range(k_cap):
            new_counts = counts.copy(); new_counts[k] += 1
            new_sums = sums.copy(); new_sums[k] += y
            new_sumsq = sumsq.copy(); new_sumsq[k] += ysq[depth]
            new_pc = pc.copy()
            _, new_pc[k] = _cluster_min(new_counts[k], new_sums[k], new_sumsq[k], c[k], lo, hi)
            child_bound = float(new_pc.sum())
            if child_bound < ub - rel_tol * max(abs(ub), _GAP_FLOOR):
                heapq.heappush(heap, (child_bound, next(counter), depth + 1,
                                      labels + (k,), new_counts, new_sums, new_sumsq, new_pc))
    else:
        best_lb = ub  # search space exhausted
        report()

    return _finish(incumbent, ub, best_lb, explored)


def _finish(incumbent: SubproblemSolution, ub: float, lb: float, explored: int) -> SubproblemSolution:
    stats = dict(incumbent.stats)
    stats["explored"] = explored
    return SubproblemSolution(
        assignment=incumbent.assignment,
        centroids=incumbent.centroids,
        distances=incumbent.distances,
        lagrangian_value=incumbent.lagrangian_value,
        cluster_cost=incumbent.cluster_cost,
        proof_gap=_relative_gap(ub, lb),
        stats=stats,
    )


def brute_force_subproblem(subproblem: LagrangianSubproblem) -> SubproblemSolution:
    """Exact optimum by full enumeration of assignments (test oracle)."""
    Y = subproblem.data.observations
    n_pts, n_y = Y.shape
    K = subproblem.K
    n_assign = K ** n_pts
    if n_assign > 10 ** 7:
        raise ValueError(f"enumeration guard: K^J = {n_assign} exceeds 1e7")
    lo, hi = subproblem.box.lo, subproblem.box.hi
    ysq = np.sum(Y * Y, axis=1)

    # All assignments as an (n_assign, n_pts) label matrix, evaluated vectorized.
    grids = np.indices((K,) * n_pts).reshape(n_pts, -1).T
    total = np.zeros(n_assign)
    for k in range(K):
        mask = grids == k
        counts = mask.sum(axis=1)
        S = mask.astype(float) @ Y
        q = mask.astype(float) @ ysq
        c_k = subproblem.c[k]
        with np.errstate(divide="ignore", invalid="ignore"):
            m = np.clip((S - 0.5 * c_k) / counts[:, None], lo, hi)
        cost = q + counts * np.sum(m * m, axis=1) - 2.0 * np.sum(S * m, axis=1) + m @ c_k
        empty = counts == 0
        if empty.any():
            cost[empty] = _empty_cluster_min(c_k, lo, hi)[1]
        total += cost
    best = int(np.argmin(total))
    return evaluate_assignment(subproblem, grids[best])


def relabel_to_reference(solution: SubproblemSolution, reference: np.ndarray,
                         subproblem: LagrangianSubproblem) -> SubproblemSolution:
    """Permute cluster labels to best match a reference centroid set.

    Chooses the permutation minimizing the total squared centroid-to-reference
    distance (exhaustive over K! for the small K used here) and recomputes the
    Lagrangian value under the new labels.  ``stats['dominance_ok']`` records
    whether the resulting labeling makes each cluster the closest one to its
    reference centroid.
    """
    reference = np.asarray(reference, dtype=float)
    K = solution.centroids.shape[0]
    if reference.shape != solution.centroids.shape:
        raise ValueError("reference must have shape (K, n_y)")
    if K > 8:
        raise ValueError("exhaustive relabeling supports K <= 8")
    d2 = np.sum((solution.centroids[:, None, :] - reference[None, :, :]) ** 2, axis=2)
    best_perm, best_cost = None, math.inf
    for perm in itertools.permutations(range(K)):
        cost = sum(d2[perm[k], k] for k in range(K))
        if cost < best_cost - 1e-15:
            best_perm, best_cost = perm, cost
    # New label k takes the old cluster best_perm[k].
    inverse = [0] * K
    for k in range(K):
        inverse[best_perm[k]] = k
    new_assignment = [inverse[a] for a in solution.assignment]
    relabeled = evaluate_assignment(subproblem, new_assignment)
    D = np.sum((relabeled.centroids[:, None, :] - reference[None, :, :]) ** 2, axis=2)
    dominance_ok = bool(np.all(np.diag(D) <= D.min(axis=0) + 1e-12))
    stats = dict(relabeled.stats)
    stats.update(solution.stats)
    stats["dominance_ok"] = dominance_ok
    return SubproblemSolution(
        assignment=relabeled.assignment,
        centroids=relabeled.centroids,
        distances=relabeled.distances,
        lagrangian_value=relabeled.lagrangian_value,
        cluster_cost=relabeled.cluster_cost,
        proof_gap=solution.proof_gap,
        stats=stats,
    )
