"""Tests for the exact node subproblem solver and its supporting pieces."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedkmeans.core import BoundingBox, NodeDataset
from fedkmeans.subsolver import (
    LagrangianSubproblem,
    NodeLimitExceeded,
    assignment_lower_bound,
    brute_force_subproblem,
    closed_form_centroid,
    evaluate_assignment,
    lloyd_incumbent,
    relabel_to_reference,
    solve_subproblem,
)

BOX2 = BoundingBox(np.array([-3.0, -3.0]), np.array([3.0, 3.0]))


def subproblem_1d(values, K, c=None, lo=-20.0, hi=20.0):
    data = NodeDataset(node_id=0, observations=np.array(values, dtype=float).reshape(-1, 1))
    box = BoundingBox(np.array([lo]), np.array([hi]))
    if c is None:
        c = np.zeros((K, 1))
    return LagrangianSubproblem(data=data, K=K, box=box, c=np.asarray(c, dtype=float))


def random_subproblem(rng, n_pts=None, K=None, n_y=2):
    n_pts = n_pts or int(rng.integers(3, 9))
    K = K or int(rng.integers(2, 4))
    Y = rng.normal(size=(n_pts, n_y))
    lo = Y.min(axis=0) - rng.uniform(0.1, 1.0, size=n_y)
    hi = Y.max(axis=0) + rng.uniform(0.1, 1.0, size=n_y)
    c = rng.normal(scale=rng.choice([0.0, 0.5, 2.0]), size=(K, n_y))
    return LagrangianSubproblem(
        data=NodeDataset(node_id=0, observations=Y),
        K=K, box=BoundingBox(lo, hi), c=c,
    )


class TestClosedFormCentroid:
    def test_mean_of_points(self):
        pts = np.array([[0.0, 0.0], [2.0, 0.0]])
        m, cost = closed_form_centroid(pts, np.zeros(2), BOX2)
        np.testing.assert_array_equal(m, [1.0, 0.0])
        assert cost == pytest.approx(2.0)

    def test_linear_term_shifts_centroid(self):
        # Stationarity of sum||y - m||^2 + c.m gives m = (sum y - c/2)/n.
        pts = np.array([[0.0, 0.0], [2.0, 0.0]])
        m, cost = closed_form_centroid(pts, np.array([2.0, 0.0]), BOX2)
        np.testing.assert_allclose(m, [0.5, 0.0])
        grid = np.linspace(-3, 3, 6001)
        best = min(float(np.sum((pts[:, 0] - g) ** 2) + 2.0 * g) for g in grid)
        value_1d = float(np.sum((pts[:, 0] - m[0]) ** 2) + 2.0 * m[0])
        assert value_1d <= best + 1e-9

    def test_empty_cluster_picks_corner(self):
        box = BoundingBox(np.zeros(2), np.ones(2))
        m, cost = closed_form_centroid(np.empty((0, 2)), np.array([1.0, -1.0]), box)
        np.testing.assert_array_equal(m, [0.0, 1.0])
        assert cost == pytest.approx(-1.0)

    def test_empty_cluster_zero_coefficient_midpoint(self):
        box = BoundingBox(np.zeros(1), np.ones(1))
        m, cost = closed_form_centroid(np.empty((0, 1)), np.zeros(1), box)
        np.testing.assert_array_equal(m, [0.5])
        assert cost == 0.0

    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=50, deadline=None)
    def test_clipping_beats_grid(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(int(rng.integers(1, 6)), 2))
        c = rng.normal(size=2)
        box = BoundingBox(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
        m, value = closed_form_centroid(pts, c, box)
        assert box.contains(m)
        grid = np.linspace(-1, 1, 41)
        for gx in grid:
            for gy in grid:
                g = np.array([gx, gy])
                candidate = float(np.sum((pts - g) ** 2) + c @ g)
                assert value <= candidate + 1e-9


class TestEvaluateAssignment:
    def test_two_point_clusters(self):
        sub = subproblem_1d([0, 1, 10, 11], K=2)
        sol = evaluate_assignment(sub, [0, 0, 1, 1])
        np.testing.assert_allclose(np.sort(sol.centroids.ravel()), [0.5, 10.5])
        assert sol.cluster_cost == pytest.approx(1.0)

    def test_interleaved_assignment(self):
        sub = subproblem_1d([0, 1, 10, 11], K=2)
        sol = evaluate_assignment(sub, [0, 1, 0, 1])
        assert sol.cluster_cost == pytest.approx(100.0)

    def test_label_permutation_invariance(self):
        sub = subproblem_1d([0, 1, 2, 8, 9], K=3)
        base = evaluate_assignment(sub, [0, 0, 1, 2, 2])
        for perm in itertools.permutations(range(3)):
            relabeled = [perm[a] for a in [0, 0, 1, 2, 2]]
            sol = evaluate_assignment(sub, relabeled)
            assert sol.lagrangian_value == pytest.approx(base.lagrangian_value, abs=1e-12)

    def test_value_decomposition(self):
        rng = np.random.default_rng(3)
        sub = random_subproblem(rng)
        labels = rng.integers(0, sub.K, size=sub.data.n_points)
        sol = evaluate_assignment(sub, labels)
        linear = sum(float(sub.c[k] @ sol.centroids[k]) for k in range(sub.K))
        assert sol.lagrangian_value == pytest.approx(sol.cluster_cost + linear, abs=1e-12)


class TestLowerBound:
    def test_empty_prefix_zero_dual(self):
        sub = subproblem_1d([0, 1, 2], K=2)
        assert assignment_lower_bound(sub, []) == 0.0

    def test_tight_at_leaves(self):
        sub = subproblem_1d([0, 1, 10, 11], K=2)
        for labels in itertools.product(range(2), repeat=4):
            bound = assignment_lower_bound(sub, labels)
            value = evaluate_assignment(sub, labels).lagrangian_value
            assert bound == pytest.approx(value, abs=1e-9)

    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=30, deadline=None)
    def test_bound_below_all_completions(self, seed):
        rng = np.random.default_rng(seed)
        sub = random_subproblem(rng, n_pts=5, K=2)
        prefix_len = int(rng.integers(0, 6))
        prefix = list(rng.integers(0, 2, size=prefix_len))
        bound = assignment_lower_bound(sub, prefix)
        for tail in itertools.product(range(2), repeat=5 - prefix_len):
            value = evaluate_assignment(sub, prefix + list(tail)).lagrangian_value
            assert bound <= value + 1e-9

    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=30, deadline=None)
    def test_bound_monotone_in_prefix(self, seed):
        rng = np.random.default_rng(seed)
        sub = random_subproblem(rng, n_pts=6, K=2)
        labels = list(rng.integers(0, 2, size=6))
        bounds = [assignment_lower_bound(sub, labels[:d]) for d in range(7)]
        for parent, child in zip(bounds, bounds[1:]):
            assert child >= parent - 1e-12


class TestLloydIncumbent:
    def test_well_separated_reaches_optimum(self):
        sub = subproblem_1d([0, 1, 10, 11], K=2)
        sol = lloyd_incumbent(sub, n_starts=5, seed=0)
        assert sol.cluster_cost == pytest.approx(1.0)

    def test_single_cluster_closed_form(self):
        data = NodeDataset(0, np.array([[0.0], [4.0]]))
        box = BoundingBox(np.array([-5.0]), np.array([5.0]))
        sub = LagrangianSubproblem(data=data, K=1, box=box, c=np.zeros((1, 1)))
        for seed in range(3):
            sol = lloyd_incumbent(sub, n_starts=1, seed=seed)
            np.testing.assert_allclose(sol.centroids, [[2.0]])

    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=20, deadline=None)
    def test_incumbent_is_upper_bound(self, seed):
        rng = np.random.default_rng(seed)
        sub = random_subproblem(rng, n_pts=6, K=2)
        incumbent = lloyd_incumbent(sub, n_starts=3, seed=seed)
        optimum = brute_force_subproblem(sub)
        assert incumbent.lagrangian_value >= optimum.lagrangian_value - 1e-9


class TestSolveSubproblem:
    def test_each_point_own_cluster(self):
        sub = subproblem_1d([0, 3, 7], K=3)
        sol = solve_subproblem(sub)
        assert sol.cluster_cost == pytest.approx(0.0, abs=1e-12)

    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=40, deadline=None)
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        sub = random_subproblem(rng, n_pts=int(rng.integers(3, 8)), K=int(rng.integers(2, 4)))
        exact = solve_subproblem(sub)
        brute = brute_force_subproblem(sub)
        scale = max(abs(brute.lagrangian_value), 1e-9)
        assert abs(exact.lagrangian_value - brute.lagrangian_value) <= 1e-9 * scale
        assert exact.proof_gap <= 1e-9

    def test_duplicated_points_co_assigned(self):
        values = [0.0, 0.0, 1.0, 1.0, 6.0, 6.0]
        sub = subproblem_1d(values, K=2)
        exact = solve_subproblem(sub)
        brute = brute_force_subproblem(sub)
        assert exact.lagrangian_value == pytest.approx(brute.lagrangian_value, abs=1e-9)

    def test_node_limit_raises_with_incumbent(self):
        rng = np.random.default_rng(0)
        sub = random_subproblem(rng, n_pts=8, K=3)
        with pytest.raises(NodeLimitExceeded) as err:
            solve_subproblem(sub, max_nodes=3)
        assert err.value.incumbent is not None
        assert err.value.lower_bound <= err.value.incumbent.lagrangian_value + 1e-9

    def test_determinism(self):
        rng = np.random.default_rng(7)
        sub = random_subproblem(rng, n_pts=7, K=3)
        a = solve_subproblem(sub)
        b = solve_subproblem(sub)
        assert a.assignment == b.assignment
        np.testing.assert_array_equal(a.centroids, b.centroids)


class TestRelabel:
    def test_identity_when_aligned(self):
        sub = subproblem_1d([0, 1, 10, 11], K=2)
        sol = solve_subproblem(sub)
        relabeled = relabel_to_reference(sol, sol.centroids, sub)
        np.testing.assert_array_equal(relabeled.centroids, sol.centroids)
        assert relabeled.assignment == sol.assignment

    def test_swap_restores_alignment(self):
        sub = subproblem_1d([0, 1, 10, 11], K=2)
        sol = solve_subproblem(sub)
        reference = sol.centroids[::-1].copy()
        relabeled = relabel_to_reference(sol, reference, sub)
        np.testing.assert_allclose(relabeled.centroids, reference)
        assert relabeled.lagrangian_value == pytest.approx(sol.lagrangian_value, abs=1e-12)

    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=30, deadline=None)
    def test_min_total_distance_permutation(self, seed):
        # c = 0 and three well-separated groups keep every cluster occupied, so
        # relabeling permutes the centroids exactly.
        rng = np.random.default_rng(seed)
        centers = np.array([[-5.0, 0.0], [0.0, 5.0], [5.0, 0.0]])
        Y = np.vstack([c + 0.1 * rng.normal(size=(2, 2)) for c in centers])
        box = BoundingBox(Y.min(axis=0) - 1, Y.max(axis=0) + 1)
        sub = LagrangianSubproblem(data=NodeDataset(0, Y), K=3, box=box,
                                   c=np.zeros((3, 2)))
        sol = solve_subproblem(sub)
        reference = rng.normal(size=sol.centroids.shape)
        relabeled = relabel_to_reference(sol, reference, sub)
        achieved = float(np.sum((relabeled.centroids - reference) ** 2))
        best = min(
            float(np.sum((sol.centroids[list(perm)] - reference) ** 2))
            for perm in itertools.permutations(range(3))
        )
        assert achieved == pytest.approx(best, abs=1e-9)


class TestWeakDualityBuildingBlock:
    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=20, deadline=None)
    def test_any_feasible_assignment_above_optimum(self, seed):
        rng = np.random.default_rng(seed)
        sub = random_subproblem(rng, n_pts=6, K=2)
        optimum = solve_subproblem(sub)
        for _ in range(5):
            labels = rng.integers(0, 2, size=6)
            assert evaluate_assignment(sub, labels).lagrangian_value >= \
                optimum.lagrangian_value - 1e-9
