"""Discrete OT: exact plans vs brute force, sinkhorn limits, barycentric map."""

import itertools

import numpy as np
import pytest

from linalign import discrete
from linalign.errors import InvalidInput, NotConverged


def brute_force_uniform(cost):
    """Minimum uniform-coupling cost over all permutations."""
    n = cost.shape[0]
    best = np.inf
    for perm in itertools.permutations(range(n)):
        best = min(best, sum(cost[i, p] for i, p in enumerate(perm)) / n)
    return best


class TestCostMatrix:
    def test_single_zero(self):
        assert np.allclose(discrete.cost_matrix([[0.0, 0.0]], [[0.0, 0.0]]), [[0.0]])

    def test_three_four_five(self):
        assert np.allclose(discrete.cost_matrix([[0.0, 0.0]], [[3.0, 4.0]]), [[25.0]])

    def test_matches_double_loop(self, rng):
        xs = rng.standard_normal((4, 3))
        xt = rng.standard_normal((5, 3))
        ref = np.array([[np.sum((a - b) ** 2) for b in xt] for a in xs])
        assert np.allclose(discrete.cost_matrix(xs, xt), ref, atol=1e-10)

    def test_zero_diagonal(self, rng):
        x = rng.standard_normal((6, 2))
        assert np.allclose(np.diag(discrete.cost_matrix(x, x)), 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInput):
            discrete.cost_matrix(np.zeros((2, 2)), np.zeros((2, 3)))


class TestPointCloud:
    def test_default_uniform(self):
        c = discrete.PointCloud(np.zeros((4, 2)))
        assert np.allclose(c.weights, 0.25)

    def test_rejects_bad_weight_sum(self):
        with pytest.raises(InvalidInput):
            discrete.PointCloud(np.zeros((2, 1)), weights=[0.4, 0.4])

    def test_rejects_negative_weights(self):
        with pytest.raises(InvalidInput):
            discrete.PointCloud(np.zeros((2, 1)), weights=[1.5, -0.5])

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidInput):
            discrete.PointCloud([[np.inf, 0.0]])


class TestExactEmd:
    def test_one_by_one(self):
        src = discrete.PointCloud([[0.0]])
        tgt = discrete.PointCloud([[1.0]])
        c = discrete.exact_emd(src, tgt, [[7.0]])
        assert np.allclose(c.plan, [[1.0]])
        assert c.cost == pytest.approx(7.0)

    def test_diagonal_optimum(self):
        src = discrete.PointCloud(np.zeros((2, 1)))
        tgt = discrete.PointCloud(np.zeros((2, 1)))
        c = discrete.exact_emd(src, tgt, np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert np.allclose(c.plan, np.eye(2) / 2)
        assert c.cost == pytest.approx(0.0)

    def test_matches_brute_force_permutations(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(2, 7))
            cost = rng.uniform(0.0, 10.0, size=(n, n))
            src = discrete.PointCloud(rng.standard_normal((n, 1)))
            tgt = discrete.PointCloud(rng.standard_normal((n, 1)))
            c = discrete.exact_emd(src, tgt, cost)
            assert c.cost == pytest.approx(brute_force_uniform(cost), abs=1e-8)

    def test_general_weights_lp_path(self):
        rng = np.random.default_rng(3)
        w_s = rng.uniform(0.1, 1.0, 4)
        w_s /= w_s.sum()
        w_t = rng.uniform(0.1, 1.0, 3)
        w_t /= w_t.sum()
        src = discrete.PointCloud(rng.standard_normal((4, 2)), weights=w_s)
        tgt = discrete.PointCloud(rng.standard_normal((3, 2)), weights=w_t)
        cost = discrete.cost_matrix(src.points, tgt.points)
        c = discrete.exact_emd(src, tgt, cost)
        assert discrete.marginal_violation(c, src, tgt) < 1e-6
        assert c.cost == pytest.approx(float(np.sum(c.plan * cost)), abs=1e-8)

    def test_mass_mismatch_rejected(self):
        src = discrete.PointCloud(np.zeros((2, 1)), weights=[0.5, 0.5])
        tgt = discrete.PointCloud(np.zeros((2, 1)), weights=[0.5, 0.5])
        bad = discrete.PointCloud(np.zeros((3, 1)))
        with pytest.raises(InvalidInput):
            discrete.exact_emd(src, bad, np.zeros((2, 2)))


class TestSinkhorn:
    def test_high_epsilon_outer_product(self, rng):
        src = discrete.PointCloud(rng.standard_normal((3, 2)))
        tgt = discrete.PointCloud(rng.standard_normal((4, 2)))
        cost = discrete.cost_matrix(src.points, tgt.points)
        c = discrete.sinkhorn(src, tgt, cost, epsilon=1e4 * cost.max())
        outer = np.outer(src.weights, tgt.weights)
        assert np.abs(c.plan - outer).max() < 1e-3

    def test_low_epsilon_near_exact(self, rng):
        src = discrete.PointCloud(rng.standard_normal((4, 2)))
        tgt = discrete.PointCloud(rng.standard_normal((4, 2)))
        cost = discrete.cost_matrix(src.points, tgt.points)
        exact = discrete.exact_emd(src, tgt, cost)
        ent = discrete.sinkhorn(
            src, tgt, cost, epsilon=1e-3 * cost.max(), max_iter=500_000, tol=1e-5
        )
        assert abs(ent.cost - exact.cost) <= 0.01 * max(exact.cost, 1e-12)

    def test_entropic_cost_at_least_exact(self, rng):
        src = discrete.PointCloud(rng.standard_normal((5, 2)))
        tgt = discrete.PointCloud(rng.standard_normal((5, 2)))
        cost = discrete.cost_matrix(src.points, tgt.points)
        exact = discrete.exact_emd(src, tgt, cost)
        ent = discrete.sinkhorn(src, tgt, cost, epsilon=0.1 * cost.mean(),
                                max_iter=100_000)
        assert exact.cost <= ent.cost + 1e-8

    def test_marginal_violation_within_tol(self, rng):
        src = discrete.PointCloud(rng.standard_normal((6, 3)))
        tgt = discrete.PointCloud(rng.standard_normal((6, 3)))
        cost = discrete.cost_matrix(src.points, tgt.points)
        c = discrete.sinkhorn(src, tgt, cost, epsilon=cost.mean(), tol=1e-8,
                              max_iter=100_000)
        assert discrete.marginal_violation(c, src, tgt) <= 1e-8

    def test_not_converged_carries_residual(self, rng):
        src = discrete.PointCloud(rng.standard_normal((8, 2)))
        tgt = discrete.PointCloud(rng.standard_normal((8, 2)))
        cost = discrete.cost_matrix(src.points, tgt.points)
        with pytest.raises(NotConverged) as err:
            discrete.sinkhorn(src, tgt, cost, epsilon=1e-4 * cost.mean(), max_iter=3)
        assert err.value.achieved is not None and err.value.achieved > 1e-6

    def test_rejects_bad_epsilon(self):
        src = discrete.PointCloud(np.zeros((2, 1)))
        with pytest.raises(InvalidInput):
            discrete.sinkhorn(src, src, np.zeros((2, 2)), epsilon=0.0)


class TestBarycentricMap:
    def test_permutation_plan(self, rng):
        y = rng.standard_normal((3, 2))
        perm = np.array([2, 0, 1])
        plan = np.zeros((3, 3))
        plan[np.arange(3), perm] = 1.0 / 3
        c = discrete.Coupling(plan=plan, cost=0.0)
        assert np.allclose(discrete.barycentric_map(c, y), y[perm])

    def test_uniform_plan_maps_to_mean(self, rng):
        y = rng.standard_normal((4, 2))
        c = discrete.Coupling(plan=np.full((3, 4), 1 / 12), cost=0.0)
        out = discrete.barycentric_map(c, y)
        assert np.allclose(out, np.tile(y.mean(axis=0), (3, 1)))

    def test_matches_direct_formula(self, rng):
        plan = rng.uniform(0.01, 1.0, size=(3, 4))
        plan /= plan.sum()
        y = rng.standard_normal((4, 2))
        c = discrete.Coupling(plan=plan, cost=0.0)
        ref = np.array([plan[i] @ y / plan[i].sum() for i in range(3)])
        assert np.allclose(discrete.barycentric_map(c, y), ref, atol=1e-12)

    def test_zero_row_rejected(self):
        plan = np.array([[0.5, 0.5], [0.0, 0.0]])
        c = discrete.Coupling(plan=plan, cost=0.0)
        with pytest.raises(InvalidInput):
            discrete.barycentric_map(c, np.zeros((2, 1)))


class TestW2Empirical:
    def test_identical_clouds_zero(self, rng):
        x = rng.standard_normal((5, 2))
        assert discrete.w2_empirical(x, x) == pytest.approx(0.0, abs=1e-10)

    def test_permuted_cloud_zero(self, rng):
        x = rng.standard_normal((6, 3))
        assert discrete.w2_empirical(x, x[::-1]) == pytest.approx(0.0, abs=1e-10)

    def test_1d_shift(self):
        xs = np.array([[0.0], [1.0]])
        for c in (0.5, 2.0):
            assert discrete.w2_empirical(xs, xs + c) == pytest.approx(c**2)

    def test_1d_equals_sorted_matching(self, rng):
        xs = rng.standard_normal((8, 1))
        xt = rng.standard_normal((8, 1))
        ref = float(np.mean((np.sort(xs, axis=0) - np.sort(xt, axis=0)) ** 2))
        assert discrete.w2_empirical(xs, xt) == pytest.approx(ref, abs=1e-10)

    def test_matches_brute_force(self, rng):
        xs = rng.standard_normal((6, 2))
        xt = rng.standard_normal((6, 2))
        cost = discrete.cost_matrix(xs, xt)
        assert discrete.w2_empirical(xs, xt) == pytest.approx(
            brute_force_uniform(cost), abs=1e-8
        )

    def test_symmetric(self, rng):
        xs = rng.standard_normal((7, 2))
        xt = rng.standard_normal((7, 2))
        assert discrete.w2_empirical(xs, xt) == pytest.approx(
            discrete.w2_empirical(xt, xs), abs=1e-8
        )
