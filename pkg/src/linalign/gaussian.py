"""Closed-form optimal transport between Gaussian approximations.

Everything here works on the sufficient statistics (mean, covariance) of a
sample.  The squared Wasserstein-2 distance between two Gaussians and the
affine map transporting one onto the other both have closed forms built from
symmetric matrix square roots, so all operations reduce to eigendecompositions
of symmetric matrices.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, NumericalFailure

#: Relative eigenvalue floor used to absorb negative round-off eigenvalues.
DEFAULT_EIG_FLOOR_REL = 1e-10

#: Default ridge added to covariances before fitting a map on learned
#: embeddings, where batch covariances can be rank deficient.
DEFAULT_COV_REG = 1e-6


@dataclass(frozen=True)
class GaussianStats:
    """Empirical mean and (biased) covariance of a sample of size ``n``."""

    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise InvalidInput(
                f"inconsistent shapes: mean {mean.shape}, cov {cov.shape}"
            )
        if self.n < 1:
            raise InvalidInput(f"sample count must be >= 1, got {self.n}")
        scale = max(np.abs(cov).max(), 1.0)
        if np.abs(cov - cov.T).max() > 1e-10 * scale:
            raise InvalidInput("covariance is not symmetric")
        w = np.linalg.eigvalsh(0.5 * (cov + cov.T))
        spectral = max(abs(w[0]), abs(w[-1]), 1e-300)
        if w[0] < -1e-8 * spectral:
            raise NumericalFailure(
                f"covariance has negative eigenvalue {w[0]:.3e} "
                f"(spectral norm {spectral:.3e})"
            )

    @property
    def dim(self):
        return self.mean.size


@dataclass(frozen=True)
class AffineMap:
    """Affine map ``x -> a @ x + b``."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or b.shape != (a.shape[0],):
            raise InvalidInput(f"inconsistent shapes: a {a.shape}, b {b.shape}")

    @property
    def dim(self):
        return self.b.size


def identity_map(d):
    """Identity :class:`AffineMap` in dimension ``d``."""
    return AffineMap(np.eye(d), np.zeros(d))


def estimate_stats(sample):
    """Empirical mean and biased (divide-by-n) covariance of an n x d sample."""
    x = np.asarray(sample, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise InvalidInput(f"expected a non-empty n x d matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("sample contains non-finite entries")
    n = x.shape[0]
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / n
    cov = 0.5 * (cov + cov.T)
    return GaussianStats(mean=mean, cov=cov, n=n)


def _check_symmetric(m, rel_tol=1e-8):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInput(f"expected a square matrix, got shape {m.shape}")
    scale = max(np.abs(m).max(), 1.0)
    if np.abs(m - m.T).max() > rel_tol * scale:
        raise InvalidInput("matrix is not symmetric within tolerance")
    return 0.5 * (m + m.T)


def _sym_power(m, power, eig_floor):
    """``V diag(max(w, eig_floor))**power V.T`` from the eigendecomposition.

    For negative powers, raises :class:`NumericalFailure` when the whole
    floored spectrum is non-positive (nothing left to invert).
    """
    try:
        w, v = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigendecomposition failed: {exc}") from exc
    w = np.maximum(w, eig_floor)
    if power < 0 and w.max() <= 0.0:
        raise NumericalFailure(
            f"matrix not invertible after flooring; eigenvalues: {w}"
        )
    if power < 0 and w.min() <= 0.0:
        raise NumericalFailure(
            f"matrix has eigenvalues at or below the floor {eig_floor:.3e}; "
            f"eigenvalues: {w}"
        )
    out = (v * w**power) @ v.T
    return 0.5 * (out + out.T)


def matrix_sqrt_sym(m, eig_floor=0.0):
    """Symmetric PSD square root via eigendecomposition, flooring eigenvalues."""
    if eig_floor < 0:
        raise InvalidInput(f"eig_floor must be >= 0, got {eig_floor}")
    m = _check_symmetric(m)
    return _sym_power(m, 0.5, eig_floor)


def _auto_floor(cov):
    w_max = float(np.linalg.eigvalsh(cov)[-1])
    return DEFAULT_EIG_FLOOR_REL * max(w_max, 0.0)


def bures_wasserstein_sq(s, t):
    """Squared W2 between the Gaussian approximations of two samples.

    ``||m_s - m_t||^2 + tr(C_s) + tr(C_t) - 2 tr((C_t^1/2 C_s C_t^1/2)^1/2)``.
    Small negative round-off (within -1e-8) is clamped to zero.
    """
    if s.dim != t.dim:
        raise InvalidInput(f"dimension mismatch: {s.dim} vs {t.dim}")
    ct = 0.5 * (t.cov + t.cov.T)
    ct_half = _sym_power(ct, 0.5, _auto_floor(ct))
    inner = ct_half @ s.cov @ ct_half
    inner = 0.5 * (inner + inner.T)
    cross = _sym_power(inner, 0.5, _auto_floor(inner))
    val = (
        float(np.sum((s.mean - t.mean) ** 2))
        + float(np.trace(s.cov))
        + float(np.trace(t.cov))
        - 2.0 * float(np.trace(cross))
    )
    if val < 0.0:
        if val < -1e-8:
            raise NumericalFailure(
                f"Bures-Wasserstein value {val:.3e} is negative beyond round-off"
            )
        val = 0.0
    return val


def fit_linear_monge(s, t, cov_reg=DEFAULT_COV_REG):
    """Closed-form affine OT map from Gaussian stats ``s`` onto ``t``.

    ``A = C_t^1/2 (C_t^1/2 C_s C_t^1/2)^-1/2 C_t^1/2`` and ``b = m_t - A m_s``,
    with ``cov_reg * I`` added to both covariances before any inversion.
    """
    if s.dim != t.dim:
        raise InvalidInput(f"dimension mismatch: {s.dim} vs {t.dim}")
    if cov_reg < 0:
        raise InvalidInput(f"cov_reg must be >= 0, got {cov_reg}")
    d = s.dim
    cs = 0.5 * (s.cov + s.cov.T) + cov_reg * np.eye(d)
    ct = 0.5 * (t.cov + t.cov.T) + cov_reg * np.eye(d)
    ct_half = _sym_power(ct, 0.5, _auto_floor(ct))
    inner = ct_half @ cs @ ct_half
    inner = 0.5 * (inner + inner.T)
    inner_inv_half = _sym_power(inner, -0.5, _auto_floor(inner))
    a = ct_half @ inner_inv_half @ ct_half
    a = 0.5 * (a + a.T)
    b = t.mean - a @ s.mean
    return AffineMap(a=a, b=b)


def apply_map(m, x):
    """Row-wise ``a @ x_i + b`` for an n x d input."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise InvalidInput(f"expected an n x d matrix, got shape {x.shape}")
    if x.shape[1] != m.dim:
        raise InvalidInput(f"dimension mismatch: map is {m.dim}-d, input is {x.shape[1]}-d")
    return x @ m.a.T + m.b


def invert_map(m, cond_limit=1e12):
    """Inverse affine map, plus the spectral norm of the inverse matrix.

    Returns ``(AffineMap(a_inv, -a_inv @ b), ||a_inv||_2)``.  The norm feeds
    the best-case risk-bound diagnostic.
    """
    svals = np.linalg.svd(m.a, compute_uv=False)
    if svals[-1] <= 0 or svals[0] / svals[-1] > cond_limit:
        raise NumericalFailure(
            f"matrix is singular or ill-conditioned (cond ~ {svals[0] / max(svals[-1], 1e-300):.3e})"
        )
    a_inv = np.linalg.inv(m.a)
    inv_norm = 1.0 / float(svals[-1])
    return AffineMap(a=a_inv, b=-a_inv @ m.b), inv_norm


def pushforward_stats(s, m):
    """Stats of the image of a Gaussian under an affine map: (Am+b, A C A^T)."""
    if s.dim != m.dim:
        raise InvalidInput(f"dimension mismatch: {s.dim} vs {m.dim}")
    cov = m.a @ s.cov @ m.a.T
    return GaussianStats(mean=m.a @ s.mean + m.b, cov=0.5 * (cov + cov.T), n=s.n)
