"""Exact and entropically regularized Kantorovich OT between point clouds.

Exact plans are computed with the LAPJV assignment solver when both clouds
have the same size and uniform weights (the optimum is then a permutation),
and with a sparse HiGHS linear program otherwise.  The entropic solver runs
fully in the log domain.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .errors import InvalidInput, NotConverged, NumericalFailure

_MARGINAL_TOL = 1e-6


def _uniform(n):
    return np.full(n, 1.0 / n)


@dataclass(frozen=True)
class PointCloud:
    """Weighted empirical measure: n points in R^d with weights summing to 1."""

    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise InvalidInput(f"expected an n x d matrix, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidInput("points contain non-finite entries")
        w = self.weights
        w = _uniform(pts.shape[0]) if w is None else np.asarray(w, dtype=float)
        if w.shape != (pts.shape[0],):
            raise InvalidInput(f"weights shape {w.shape} does not match {pts.shape[0]} points")
        if np.any(w < 0):
            raise InvalidInput("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-10:
            raise InvalidInput(f"weights sum to {w.sum():.12f}, expected 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


@dataclass(frozen=True)
class Coupling:
    """Transport plan between two clouds and the cost attained at it."""

    plan: np.ndarray
    cost: float

    def __post_init__(self):
        plan = np.asarray(self.plan, dtype=float)
        if plan.ndim != 2:
            raise InvalidInput(f"plan must be a matrix, got shape {plan.shape}")
        if np.any(plan < -1e-12):
            raise InvalidInput("plan has negative entries")
        object.__setattr__(self, "plan", np.maximum(plan, 0.0))
        object.__setattr__(self, "cost", float(self.cost))


def marginal_violation(coupling, source, target):
    """Max absolute deviation of the plan's marginals from the cloud weights."""
    row = np.abs(coupling.plan.sum(axis=1) - source.weights).max()
    col = np.abs(coupling.plan.sum(axis=0) - target.weights).max()
    return max(row, col)


def cost_matrix(xs, xt):
    """Pairwise squared Euclidean costs, shape n_s x n_t."""
    xs = np.asarray(xs, dtype=float)
    xt = np.asarray(xt, dtype=float)
    if xs.ndim != 2 or xt.ndim != 2:
        raise InvalidInput("inputs must be n x d matrices")
    if xs.shape[1] != xt.shape[1]:
        raise InvalidInput(f"dimension mismatch: {xs.shape[1]} vs {xt.shape[1]}")
    return np.maximum(cdist(xs, xt, "sqeuclidean"), 0.0)


def _check_instance(source, target, cost):
    cost = np.asarray(cost, dtype=float)
    if cost.shape != (source.size, target.size):
        raise InvalidInput(
            f"cost shape {cost.shape} does not match clouds ({source.size}, {target.size})"
        )
    if abs(source.weights.sum() - target.weights.sum()) > 1e-8:
        raise InvalidInput("source and target total mass differ")
    return cost


def _emd_lp(a, b, cost):
    """General-weight exact OT via a sparse HiGHS linear program."""
    ns, nt = cost.shape
    rows_i = np.repeat(np.arange(ns), nt)
    cols_j = np.tile(np.arange(nt), ns)
    var = np.arange(ns * nt)
    # Row-sum constraints plus all-but-one column-sum constraints (the last
    # one is redundant given equal total mass).
    a_eq = sp.vstack(
        [
            sp.csr_matrix((np.ones(ns * nt), (rows_i, var)), shape=(ns, ns * nt)),
            sp.csr_matrix(
                (np.ones(np.count_nonzero(cols_j < nt - 1)),
                 (cols_j[cols_j < nt - 1], var[cols_j < nt - 1])),
                shape=(nt - 1, ns * nt),
            ),
        ]
    )
    b_eq = np.concatenate([a, b[:-1]])
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise NumericalFailure(f"exact OT linear program failed: {res.message}")
    return res.x.reshape(ns, nt)


def exact_emd(source, target, cost):
    """Vertex-optimal transport plan minimizing <plan, cost>."""
    cost = _check_instance(source, target, cost)
    ns, nt = cost.shape
    uniform = (
        ns == nt
        and np.allclose(source.weights, 1.0 / ns, atol=1e-12)
        and np.allclose(target.weights, 1.0 / nt, atol=1e-12)
    )
    if uniform:
        rows, cols = linear_sum_assignment(cost)
        plan = np.zeros_like(cost)
        plan[rows, cols] = 1.0 / ns
    else:
        plan = _emd_lp(source.weights, target.weights, cost)
    coupling = Coupling(plan=plan, cost=float(np.sum(plan * cost)))
    if marginal_violation(coupling, source, target) > _MARGINAL_TOL:
        raise NumericalFailure("exact OT plan violates marginal constraints")
    return coupling


def sinkhorn(source, target, cost, epsilon, max_iter=1000, tol=1e-6):
    """Entropic OT plan via log-domain alternating marginal scaling.

    The reported cost is ``<plan, cost>`` without the entropy term.  Raises
    :class:`NotConverged` (carrying the achieved violation) when ``max_iter``
    is exhausted above ``tol``.
    """
    if epsilon <= 0:
        raise InvalidInput(f"epsilon must be > 0, got {epsilon}")
    if tol <= 0:
        raise InvalidInput(f"tol must be > 0, got {tol}")
    cost = _check_instance(source, target, cost)
    with np.errstate(divide="ignore"):
        log_a = np.log(source.weights)
        log_b = np.log(target.weights)
    k_log = -cost / epsilon
    f = np.zeros(source.size)
    g = np.zeros(target.size)

    def plan_from(f, g):
        return np.exp(k_log + f[:, None] + g[None, :])

    violation = np.inf
    for _ in range(max_iter):
        f = log_a - logsumexp(k_log + g[None, :], axis=1)
        g = log_b - logsumexp(k_log + f[:, None], axis=0)
        plan = plan_from(f, g)
        if not np.all(np.isfinite(plan)):
            raise NumericalFailure("sinkhorn plan overflowed despite log-domain updates")
        violation = max(
            np.abs(plan.sum(axis=1) - source.weights).max(),
            np.abs(plan.sum(axis=0) - target.weights).max(),
        )
        if violation <= tol:
            return Coupling(plan=plan, cost=float(np.sum(plan * cost)))
    raise NotConverged(
        f"sinkhorn stopped after {max_iter} iterations with marginal violation "
        f"{violation:.3e} > tol {tol:.3e}",
        achieved=violation,
    )


def barycentric_map(coupling, target_points):
    """Conditional-mean image of each source point under the plan."""
    y = np.asarray(target_points, dtype=float)
    plan = coupling.plan
    if y.ndim != 2 or y.shape[0] != plan.shape[1]:
        raise InvalidInput(
            f"target points shape {y.shape} does not match plan columns {plan.shape[1]}"
        )
    row_sums = plan.sum(axis=1)
    if np.any(row_sums <= 0):
        raise InvalidInput("plan has a zero row sum; conditional mean undefined")
    return (plan @ y) / row_sums[:, None]


def w2_empirical(xs, xt):
    """Exact squared-Euclidean OT cost between two uniform clouds."""
    xs = np.asarray(xs, dtype=float)
    xt = np.asarray(xt, dtype=float)
    source = PointCloud(xs)
    target = PointCloud(xt)
    cost = cost_matrix(xs, xt)
    return exact_emd(source, target, cost).cost
