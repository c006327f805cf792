"""Measures, costs and matrix-free kernel operators.

A kernel is either stored densely (``n x m``) or as a positive factorization
``K = xi.T @ zeta`` with ``xi`` of shape ``(p*r, n)`` and ``zeta`` of shape
``(p*r, m)``. Factorized operators are never materialized by the solvers, so a
matrix-vector product costs ``O(r (n + m))``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyFeature,
    LengthMismatch,
    NonPositiveDot,
)

WEIGHT_SUM_TOL = 1e-12
_POSITIVITY_SCAN_CAP = 4096 * 4096


def _frozen(arr):
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud ``sum_i a_i delta_{x_i}``.

    Parameters
    ----------
    points : array_like, shape (n, d)
        Support points, one per row.
    weights : array_like, shape (n,), optional
        Strictly positive probabilities summing to one. Uniform if omitted.
    """

    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise DimensionMismatch(
                f"points must be a non-empty (n, d) array, got shape {pts.shape}"
            )
        n = pts.shape[0]
        if self.weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.asarray(self.weights, dtype=np.float64).ravel()
        if w.shape[0] != n:
            raise LengthMismatch(f"{n} points but {w.shape[0]} weights")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        if not np.all(w > 0):
            raise ValueError(
                "weights must be strictly positive; prune zero-weight points explicitly"
            )
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @classmethod
    def normalized(cls, points, weights):
        """Build a measure after rescaling nonnegative ``weights`` to sum to one."""
        w = np.asarray(weights, dtype=np.float64)
        return cls(points, w / w.sum())

    def with_points(self, points):
        return DiscreteMeasure(points, self.weights)


COST_KINDS = ("squared_euclidean", "neg_log_dot", "from_features")


@dataclass(frozen=True)
class CostSpec:
    kind: str = "squared_euclidean"
    epsilon: float = 1.0

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ValueError(f"unknown cost kind {self.kind!r}; expected one of {COST_KINDS}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")


def _check_dims(mu, nu):
    if mu.dim != nu.dim:
        raise DimensionMismatch(f"dimension {mu.dim} vs {nu.dim}")


def squared_distances(X, Y):
    """Pairwise ``||x_i - y_j||^2`` for ``X (n, d)`` and ``Y (m, d)``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    D = np.einsum("id,id->i", X, X)[:, None] + np.einsum("jd,jd->j", Y, Y)[None, :]
    D -= 2.0 * (X @ Y.T)
    np.maximum(D, 0.0, out=D)
    return D


def cost_matrix(mu, nu, spec, features=None):
    """Dense ground cost ``C[i, j] = c(x_i, y_j)``.

    ``from_features`` needs ``features`` (a sampled feature map) and returns
    ``-eps * log(phi(x)^T phi(y))``.
    """
    _check_dims(mu, nu)
    if spec.kind == "squared_euclidean":
        return squared_distances(mu.points, nu.points)
    if spec.kind == "neg_log_dot":
        G = mu.points @ nu.points.T
        if np.any(G <= 0):
            i, j = np.unravel_index(np.argmin(G), G.shape)
            raise NonPositiveDot(f"x_{i}^T y_{j} = {G[i, j]!r} <= 0")
        return -np.log(G)
    if features is None:
        raise ValueError("from_features cost requires sampled features")
    from .features import embed

    xi = embed(features, mu)
    zeta = embed(features, nu)
    return -spec.epsilon * np.log(xi.T @ zeta)


def cost_from_features(phi_x, phi_y, epsilon):
    """``-eps * log(phi_x . phi_y)`` for two positive feature vectors."""
    phi_x = np.asarray(phi_x, dtype=np.float64).ravel()
    phi_y = np.asarray(phi_y, dtype=np.float64).ravel()
    if phi_x.size == 0 or phi_y.size == 0:
        raise EmptyFeature("feature vectors must be non-empty")
    if phi_x.shape != phi_y.shape:
        raise LengthMismatch(f"feature lengths {phi_x.size} vs {phi_y.size}")
    if np.any(phi_x < 0) or np.any(phi_y < 0):
        raise ValueError("feature entries must be nonnegative")
    dot = float(phi_x @ phi_y)
    if not dot > 0:
        raise ValueError("features have a zero inner product")
    return -epsilon * np.log(dot)


class KernelOperator:
    """Positive ``n x m`` kernel exposing ``matvec`` (``K w``) and ``rmatvec`` (``K^T w``)."""

    cost_class = None
    shape = (0, 0)

    def matvec(self, w):
        raise NotImplementedError

    def rmatvec(self, w):
        raise NotImplementedError

    def materialize(self):
        raise NotImplementedError

    def extremes(self, chunk=2048):
        """``(min K, max K)``; factorized operators are scanned in row chunks."""
        raise NotImplementedError

    def _check(self, w, size):
        w = np.asarray(w, dtype=np.float64)
        if w.ndim != 1 or w.shape[0] != size:
            raise LengthMismatch(f"expected a vector of length {size}, got shape {w.shape}")
        return w


class DenseKernel(KernelOperator):
    cost_class = "quadratic"

    def __init__(self, matrix):
        K = np.asarray(matrix, dtype=np.float64)
        if K.ndim != 2:
            raise DimensionMismatch("dense kernel must be a 2-d array")
        if not np.all(np.isfinite(K)) or np.any(K < 0):
            raise ValueError("dense kernel entries must be finite and nonnegative")
        self.K = _frozen(K)
        self.shape = K.shape
        # exact zeros come from underflow in exp(-C/eps); solvers refuse them
        self.has_zeros = bool(np.any(K == 0))

    @classmethod
    def trusted(cls, K, has_zeros):
        """Wrap an already validated C-contiguous float64 matrix without copying or scanning it."""
        op = cls.__new__(cls)
        K.setflags(write=False)
        op.K = K
        op.shape = K.shape
        op.has_zeros = bool(has_zeros)
        return op

    def matvec(self, w):
        return self.K @ self._check(w, self.shape[1])

    def rmatvec(self, w):
        return self._check(w, self.shape[0]) @ self.K

    def materialize(self):
        return self.K

    def extremes(self, chunk=2048):
        return float(self.K.min()), float(self.K.max())


class FactorizedKernel(KernelOperator):
    """``K = xi.T @ zeta`` with nonnegative factors.

    Each support point's feature vector is stored contiguously (the factors
    are kept as ``(n, p*r)`` and ``(m, p*r)`` row-major arrays), so
    ``xi``/``zeta`` are transposed views.
    """

    cost_class = "linear_in_r"

    def __init__(self, xi, zeta):
        xi = np.asarray(xi, dtype=np.float64)
        zeta = np.asarray(zeta, dtype=np.float64)
        if xi.ndim != 2 or zeta.ndim != 2:
            raise DimensionMismatch("factors must be 2-d arrays")
        if xi.shape[0] != zeta.shape[0]:
            raise DimensionMismatch(
                f"feature dimensions differ: {xi.shape[0]} vs {zeta.shape[0]}"
            )
        for name, F in (("xi", xi), ("zeta", zeta)):
            if not np.all(np.isfinite(F)) or np.any(F < 0):
                raise ValueError(f"{name} entries must be finite and nonnegative")
        # sufficient condition for a strictly positive product: one feature row
        # positive on every point of both supports
        if not np.any(np.all(xi > 0, axis=1) & np.all(zeta > 0, axis=1)):
            too_big = xi.shape[1] * zeta.shape[1] > _POSITIVITY_SCAN_CAP
            if too_big or np.min(xi.T @ zeta) <= 0:
                raise ValueError("factorization does not guarantee a positive kernel")
        self._xi_t = _frozen(xi.T)
        self._zeta_t = _frozen(zeta.T)
        self.shape = (xi.shape[1], zeta.shape[1])
        self.rank = xi.shape[0]
        self.has_zeros = False

    @property
    def xi(self):
        return self._xi_t.T

    @property
    def zeta(self):
        return self._zeta_t.T

    def matvec(self, w):
        w = self._check(w, self.shape[1])
        return self._xi_t @ (w @ self._zeta_t)

    def rmatvec(self, w):
        w = self._check(w, self.shape[0])
        return self._zeta_t @ (w @ self._xi_t)

    def materialize(self):
        return self._xi_t @ self._zeta_t.T

    def extremes(self, chunk=2048):
        lo, hi = np.inf, -np.inf
        for start in range(0, self.shape[0], chunk):
            block = self._xi_t[start : start + chunk] @ self._zeta_t.T
            lo = min(lo, float(block.min()))
            hi = max(hi, float(block.max()))
        return lo, hi


def gibbs_kernel(C, epsilon):
    """Dense Gibbs kernel ``exp(-C / eps)``.

    Entries that underflow to zero are kept but flagged (``has_zeros``) and a
    ``RuntimeWarning`` is emitted; the solvers refuse such kernels.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    K = np.asarray(C, dtype=np.float64) / -epsilon
    np.exp(K, out=K)
    op = DenseKernel(K)
    if op.has_zeros:
        warnings.warn(
            f"{int(np.count_nonzero(op.K == 0))} kernel entries underflowed to 0 "
            f"(epsilon={epsilon})",
            RuntimeWarning,
            stacklevel=2,
        )
    return op


def kernel_matvec(K, w):
    return K.matvec(w)


def kernel_rmatvec(K, w):
    return K.rmatvec(w)


@dataclass(frozen=True)
class DualPotentials:
    """Sinkhorn scalings with accumulated log rescalings.

    The effective scalings are ``u * exp(log_offset_u)`` and
    ``v * exp(log_offset_v)``; potentials are ``eps * log`` of those.
    """

    u: np.ndarray
    v: np.ndarray
    log_offset_u: float = 0.0
    log_offset_v: float = 0.0

    def log_u(self):
        return np.log(self.u) + self.log_offset_u

    def log_v(self):
        return np.log(self.v) + self.log_offset_v

    def alpha(self, epsilon):
        return epsilon * self.log_u()

    def beta(self, epsilon):
        return epsilon * self.log_v()

    def rescaled(self, t):
        """Gauge transform ``(u, v) -> (t u, v / t)``."""
        return DualPotentials(self.u * t, self.v / t, self.log_offset_u, self.log_offset_v)

    @classmethod
    def from_potentials(cls, alpha, beta, epsilon):
        """Entries more than ~700 below the max of ``alpha / epsilon`` underflow to 0."""
        la = np.asarray(alpha, dtype=np.float64) / epsilon
        lb = np.asarray(beta, dtype=np.float64) / epsilon
        su, sv = float(la.max()), float(lb.max())
        return cls(np.exp(la - su), np.exp(lb - sv), su, sv)
