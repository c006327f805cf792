"""Envelope gradients of the regularized OT value and finite-difference checks.

The value ``G(K) = eps (a^T log u* + b^T log v*)`` has ``dG/dK = -eps u* v*^T``.
Gradients with respect to point locations and feature parameters follow by
the chain rule through ``K_theta = xi^T zeta`` and are contracted without
forming any ``n x m`` object.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import DenseKernel, gibbs_kernel, squared_distances
from .errors import UnconvergedPotentials
from .features import embed_points, factorized_kernel, feature_values, jacobian_u, jacobian_x
from .solver import SolveConfig, plan, sinkhorn

POTENTIAL_TOL = 1e-8
_CHUNK = 1024


@dataclass(frozen=True)
class GradReport:
    """A gradient, shaped like the differentiated object, and an optional FD error."""

    grad: np.ndarray
    fd_max_rel_err: float = None
    name: str = ""

    def __post_init__(self):
        if not np.all(np.isfinite(self.grad)):
            raise FloatingPointError(f"gradient {self.name!r} has non-finite entries")

    def to_dict(self):
        return {"name": self.name, "grad": np.asarray(self.grad).tolist(),
                "fd_max_rel_err": self.fd_max_rel_err}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _gate(report):
    if not report.marginal_residual <= POTENTIAL_TOL:
        raise UnconvergedPotentials(
            f"marginal residual {report.marginal_residual:.3e} > {POTENTIAL_TOL:g}; "
            "solve to a tighter tolerance before differentiating"
        )
    pots = report.potentials
    # effective scalings are u e^{ou}, v e^{ov}; every gradient is bilinear in them
    return pots.u, pots.v, math.exp(pots.log_offset_u + pots.log_offset_v)


def grad_wrt_kernel(K, report, epsilon=None):
    """``dG/dK = -eps u* v*^T`` for a dense kernel.

    Raises
    ------
    UnconvergedPotentials
        If ``report.marginal_residual > 1e-8``.
    """
    eps = report.epsilon if epsilon is None else epsilon
    u, v, scale = _gate(report)
    if u.shape[0] != K.shape[0] or v.shape[0] != K.shape[1]:
        raise ValueError("potentials do not match the kernel shape")
    return GradReport(-eps * scale * np.outer(u, v), name="kernel")


def _contract_x(features, X, weights, w):
    """``sum_{k,s} weights_i * dphi_theta(x_i)_{ks}/dx_i * w_{ks}`` for each point."""
    r, p = features.r, features.p
    W = w.reshape(r, p) / math.sqrt(r)
    out = np.empty_like(X)
    for start in range(0, X.shape[0], _CHUNK):
        J = jacobian_x(features.spec, X[start : start + _CHUNK], features.theta)
        out[start : start + J.shape[0]] = np.einsum("nrpd,rp->nd", J, W)
    return weights[:, None] * out


def grad_wrt_locations(features, mu, nu, report, epsilon=None):
    """Gradients of ``W_theta`` with respect to both supports.

    ``dW/dx_i = -eps u_i J_i^T (zeta v)`` with ``J_i = d phi_theta(x_i) / d x_i``,
    and symmetrically for ``y_j``. Cost ``O(r d (n + m))``.

    Returns
    -------
    (GradReport, GradReport)
        Gradients shaped like ``mu.points`` and ``nu.points``.
    """
    eps = report.epsilon if epsilon is None else epsilon
    u, v, scale = _gate(report)
    Fx = embed_points(features, mu.points)
    Fy = embed_points(features, nu.points)
    zeta_v = v @ Fy
    xi_u = u @ Fx
    gx = -eps * scale * _contract_x(features, mu.points, u, zeta_v)
    gy = -eps * scale * _contract_x(features, nu.points, v, xi_u)
    return GradReport(gx, name="x"), GradReport(gy, name="y")


def grad_wrt_locations_dense(mu, nu, report, epsilon=None):
    """Location gradients for the exact squared-Euclidean cost with a dense kernel.

    ``dW/dx_i = sum_j P_ij 2 (x_i - y_j)``. The two gradients sum to zero
    because the cost is translation invariant.
    """
    eps = report.epsilon if epsilon is None else epsilon
    _gate(report)
    K = DenseKernel(np.exp(-squared_distances(mu.points, nu.points) / eps))
    P = plan(K, report.potentials)
    X, Y = mu.points, nu.points
    gx = 2.0 * (P.sum(axis=1)[:, None] * X - P @ Y)
    gy = 2.0 * (P.sum(axis=0)[:, None] * Y - P.T @ X)
    return GradReport(gx, name="x"), GradReport(gy, name="y")


def _phi_and_du(features, X):
    """Unscaled feature values ``(n, r, p)`` and parameter jacobians ``(n, r, p, d_u)``."""
    return (feature_values(features.spec, X, features.theta),
            jacobian_u(features.spec, X, features.theta))


def grad_wrt_features(features, mu, nu, report, epsilon=None):
    """Gradient of ``W_theta`` with respect to the sampled parameters, shape ``(r, d_u)``.

    ``dW/du_k = -(eps / r) sum_s [ (sum_i u_i d_u phi_s(x_i,u_k)) (sum_j v_j phi_s(y_j,u_k))
    + (sum_i u_i phi_s(x_i,u_k)) (sum_j v_j d_u phi_s(y_j,u_k)) ]``.
    """
    eps = report.epsilon if epsilon is None else epsilon
    u, v, scale = _gate(report)
    r = features.r

    def sums(X, w):
        val = np.zeros((r, features.p))
        jac = np.zeros((r, features.p, features.spec.param_dim))
        for start in range(0, X.shape[0], _CHUNK):
            sl = slice(start, start + _CHUNK)
            phi, dphi = _phi_and_du(features, X[sl])
            val += np.einsum("n,nrp->rp", w[sl], phi)
            jac += np.einsum("n,nrpd->rpd", w[sl], dphi)
        return val, jac

    vx, jx = sums(mu.points, u)
    vy, jy = sums(nu.points, v)
    g = np.einsum("rpd,rp->rd", jx, vy) + np.einsum("rp,rpd->rd", vx, jy)
    return GradReport(-eps * scale / r * g, name="theta")


# -- finite differences --------------------------------------------------------


def central_differences(func, x0, h_rel=1e-6):
    """Central differences of a scalar ``func`` with step ``h_rel * max(1, |x|)`` per coordinate."""
    x0 = np.asarray(x0, dtype=np.float64)
    out = np.empty(x0.shape)
    flat = out.reshape(-1)
    for idx in range(x0.size):
        xp = x0.copy().reshape(-1)
        xm = x0.copy().reshape(-1)
        h = h_rel * max(1.0, abs(xp[idx]))
        xp[idx] += h
        xm[idx] -= h
        flat[idx] = (func(xp.reshape(x0.shape)) - func(xm.reshape(x0.shape))) / (2.0 * h)
    return out


def max_rel_err(grad, fd):
    """``||grad - fd||_inf / ||fd||_inf``."""
    denom = float(np.max(np.abs(fd)))
    diff = float(np.max(np.abs(np.asarray(grad) - fd)))
    return diff / denom if denom > 0 else diff


TIGHT = SolveConfig(marginal_tol=1e-13, max_iters=1_000_000, check_every=1)


def check_kernel_grad(K, a, b, epsilon, config=TIGHT, corrupt=0.0):
    """FD check of :func:`grad_wrt_kernel` on every entry of a dense kernel."""
    rep = sinkhorn(K, a, b, config, epsilon)
    g = grad_wrt_kernel(K, rep).grad * (1.0 + corrupt)

    def value(M):
        return sinkhorn(DenseKernel(M), a, b, config, epsilon).w_hat

    fd = central_differences(value, K.materialize())
    return GradReport(g, max_rel_err(g, fd), "kernel")


def check_location_grad(features, mu, nu, epsilon, config=TIGHT, corrupt=0.0):
    """FD check of :func:`grad_wrt_locations` over all coordinates of both supports."""
    rep = sinkhorn(factorized_kernel(features, mu, nu), mu.weights, nu.weights, config, epsilon)
    gx, gy = grad_wrt_locations(features, mu, nu, rep)
    g = np.concatenate([gx.grad.ravel(), gy.grad.ravel()]) * (1.0 + corrupt)
    n = mu.points.size

    def value(z):
        m1 = mu.with_points(z[:n].reshape(mu.points.shape))
        m2 = nu.with_points(z[n:].reshape(nu.points.shape))
        K = factorized_kernel(features, m1, m2)
        return sinkhorn(K, m1.weights, m2.weights, config, epsilon).w_hat

    fd = central_differences(value, np.concatenate([mu.points.ravel(), nu.points.ravel()]))
    return GradReport(g, max_rel_err(g, fd), "locations")


def check_feature_grad(features, mu, nu, epsilon, config=TIGHT, corrupt=0.0):
    """FD check of :func:`grad_wrt_features` over every parameter coordinate."""
    rep = sinkhorn(factorized_kernel(features, mu, nu), mu.weights, nu.weights, config, epsilon)
    g = grad_wrt_features(features, mu, nu, rep).grad * (1.0 + corrupt)

    def value(theta):
        f = features.with_theta(theta)
        return sinkhorn(factorized_kernel(f, mu, nu), mu.weights, nu.weights, config, epsilon).w_hat

    fd = central_differences(value, features.theta)
    return GradReport(g, max_rel_err(g, fd), "theta")


def check_dense_location_grad(mu, nu, epsilon, config=TIGHT):
    """FD check of :func:`grad_wrt_locations_dense`."""
    C = squared_distances(mu.points, nu.points)
    rep = sinkhorn(gibbs_kernel(C, epsilon), mu.weights, nu.weights, config, epsilon)
    gx, gy = grad_wrt_locations_dense(mu, nu, rep)
    g = np.concatenate([gx.grad.ravel(), gy.grad.ravel()])
    n = mu.points.size

    def value(z):
        X = z[:n].reshape(mu.points.shape)
        Y = z[n:].reshape(nu.points.shape)
        K = gibbs_kernel(squared_distances(X, Y), epsilon)
        return sinkhorn(K, mu.weights, nu.weights, config, epsilon).w_hat

    fd = central_differences(value, np.concatenate([mu.points.ravel(), nu.points.ravel()]))
    return GradReport(g, max_rel_err(g, fd), "dense_locations")
