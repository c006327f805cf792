"""Concentration constants, error diagnostics and the feature-budget calculator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import gamma

from ..errors import InvalidProbability, UnsupportedSpec
from .maps import arccos_J, exact_kernel
from .sampling import embed_points

ARCCOS_U_TRUNCATION = 8.0  # in units of sigma
DEFAULT_BUDGET_CONSTANT = 2.0


@dataclass(frozen=True)
class ConcentrationConstants:
    """Constants controlling how fast ``k_theta`` concentrates around ``k``.

    Attributes
    ----------
    psi : float
        Bound on ``phi(x,u)^T phi(y,u) / k(x,y)``.
    kappa_lb : float
        Lower bound of ``k`` on the domain.
    V : float
        Bound on ``E_u ||grad_x phi(x, u)||^2``.
    D : float
        ``sup ||(x, y)||`` over the domain.
    u_truncation : float or None
        Radius of the parameter region searched when ``psi`` was computed
        numerically.
    """

    psi: float
    kappa_lb: float
    V: float
    D: float
    u_truncation: float = None

    def __post_init__(self):
        for name in ("psi", "kappa_lb", "V", "D"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be finite and positive, got {val!r}")


def gaussian_ratio_sup(spec):
    """Exact ``sup phi(x,u) phi(y,u) / k(x,y)`` over ``x, y`` in ``B(0,R)`` and all ``u``.

    Completing the square in ``u`` gives ``(2q)^{d/2} exp(||x+y||^2 / (eps (2q-1)))``,
    maximal at ``x = y`` on the sphere of radius ``R``.
    """
    q, d, eps, R = spec.q, spec.dim, spec.epsilon, spec.radius
    return (2.0 * q) ** (d / 2.0) * math.exp(4.0 * R * R / (eps * (2.0 * q - 1.0)))


def _half_normal_moment(k):
    """``E[max(0, w)^k]`` for ``w ~ N(0, 1)``."""
    return 2.0 ** (k / 2.0 - 1.0) * gamma((k + 1) / 2.0) / math.sqrt(math.pi)


def arccos_gradient_moment(spec):
    """``sup_{||x|| <= R} E_u ||grad_x phi(x, u)||^2`` for the arccos map (``s >= 1``).

    The change of measure ``u = sigma w`` turns the expectation into
    ``2 s^2 ||x||^{2s-2} (M_{2s} + (d-1) M_{2s-2})`` with half-normal moments ``M_k``.
    """
    s, d, R = spec.s, spec.dim, spec.radius
    if s == 0:
        raise UnsupportedSpec("the s = 0 arccos map is not differentiable in x")
    return 2.0 * s * s * R ** (2 * s - 2) * (
        _half_normal_moment(2 * s) + (d - 1) * _half_normal_moment(2 * s - 2)
    )


def _project_ball(z, radius):
    nrm = np.linalg.norm(z, axis=-1, keepdims=True)
    return z * np.minimum(1.0, radius / np.maximum(nrm, 1e-300))


def arccos_ratio_sup(spec, n_random=200_000, n_refine=20, seed=0):
    """Numerical ``sup phi(x,u)^T phi(y,u) / (k_s(x,y) + kappa)``.

    Random search over ``x, y`` in ``B(0,R)`` and ``||u|| <= 8 sigma`` followed by
    Nelder-Mead refinement from the best candidates.
    """
    d, R = spec.dim, spec.radius
    umax = ARCCOS_U_TRUNCATION * spec.sigma
    rng = np.random.default_rng(seed)

    def ball(n, radius):
        z = rng.normal(size=(n, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        return z * radius * rng.uniform(size=(n, 1)) ** (1.0 / d)

    X, Y = ball(n_random, R), ball(n_random, R)
    half = n_random // 2
    # half the parameters from the sampling law, half spread over the truncated ball
    U = np.vstack([
        _project_ball(rng.normal(size=(half, d)) * spec.sigma, umax),
        ball(n_random - half, umax),
    ])
    vals = _pairwise_ratio(spec, X, Y, U)
    best = float(vals.max())
    starts = np.argsort(vals)[-n_refine:]

    def neg(z):
        x = _project_ball(z[:d], R)[None]
        y = _project_ball(z[d : 2 * d], R)[None]
        u = _project_ball(z[2 * d :], umax)[None]
        return -float(_pairwise_ratio(spec, x, y, u)[0])

    for i in starts:
        z0 = np.concatenate([X[i], Y[i], U[i]])
        res = minimize(neg, z0, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
        best = max(best, -float(res.fun))
    return best


def _pairwise_ratio(spec, X, Y, U):
    """Ratio for aligned triples ``(x_i, y_i, u_i)``."""
    s, sigma, d, kappa = spec.s, spec.sigma, spec.dim, spec.kappa
    px = np.einsum("nd,nd->n", X, U)
    py = np.einsum("nd,nd->n", Y, U)
    if s == 0:
        rx, ry = (px > 0).astype(float), (py > 0).astype(float)
    else:
        rx, ry = np.maximum(px, 0.0) ** s, np.maximum(py, 0.0) ** s
    su = np.einsum("nd,nd->n", U, U)
    num = 2.0 * sigma**d * rx * ry * np.exp(-0.5 * su * (1.0 - 1.0 / sigma**2)) + kappa
    nx, ny = np.linalg.norm(X, axis=1), np.linalg.norm(Y, axis=1)
    den = nx * ny
    cos = np.where(den > 0, np.einsum("nd,nd->n", X, Y) / np.where(den > 0, den, 1.0), 1.0)
    ks = den**s * arccos_J(s, np.arccos(np.clip(cos, -1.0, 1.0))) / np.pi
    if s > 0:
        ks = np.where(den > 0, ks, 0.0)
    return num / (ks + kappa)


def concentration_constants(spec, seed=0):
    """Constants ``psi``, ``kappa_lb``, ``V``, ``D`` for a shipped map on ``B(0,R)``.

    gaussian: ``psi = 2^{d/2+1} q^{d/2}``, ``kappa_lb = exp(-4R^2/eps)``,
    ``V = 2^{d/2+3} q^{d/2} [(R/eps)^2 + q/(4 eps)]``. This ``psi`` is the
    advertised bound; the true supremum of the ratio is larger, see
    :func:`gaussian_ratio_sup`.

    arccos: ``psi`` by numerical maximization with ``||u|| <= 8 sigma``,
    ``kappa_lb = kappa``, ``V`` in closed form.
    """
    D = math.sqrt(2.0) * spec.radius
    if spec.kind == "gaussian":
        q, d, eps, R = spec.q, spec.dim, spec.epsilon, spec.radius
        psi = 2.0 ** (d / 2.0 + 1.0) * q ** (d / 2.0)
        V = 2.0 ** (d / 2.0 + 3.0) * q ** (d / 2.0) * ((R / eps) ** 2 + q / (4.0 * eps))
        return ConcentrationConstants(psi, math.exp(-4.0 * R * R / eps), V, D)
    if spec.kind == "arccos_perturbed":
        psi = arccos_ratio_sup(spec, seed=seed)
        return ConcentrationConstants(
            psi, spec.kappa, float(arccos_gradient_moment(spec)), D,
            u_truncation=ARCCOS_U_TRUNCATION * spec.sigma,
        )
    if spec.custom.constants is None:
        raise UnsupportedSpec("custom map without user-provided constants")
    return spec.custom.constants


def feature_budget(delta, tau, constants, d, epsilon, C_inf, n, const=DEFAULT_BUDGET_CONSTANT):
    """Number of features prescribed for accuracy ``delta`` with probability ``1 - tau``.

    ``ceil(const * psi^2 / delta^2 * min(d C_inf^2 / eps + d log(psi V D / (tau delta)),
    log(n / tau)))``, at least 1.
    """
    for name, val in (("delta", delta), ("tau", tau)):
        if not 0.0 < val < 1.0:
            raise InvalidProbability(f"{name} must lie in (0, 1), got {val!r}")
    if not (epsilon > 0 and n >= 1 and d >= 1 and C_inf >= 0 and const > 0):
        raise ValueError("epsilon, n, d, const must be positive and C_inf nonnegative")
    psi, V, D = constants.psi, constants.V, constants.D
    uniform = d * C_inf**2 / epsilon + d * math.log(psi * V * D / (tau * delta))
    finite = math.log(n / tau)
    bracket = min(uniform, finite)
    return max(1, math.ceil(const * psi**2 / delta**2 * bracket))


def finite_set_bound(r, delta, psi, n, m=None):
    """Failure probability bound ``2 N^2 exp(-r delta^2 / (2 psi^2))`` with ``N = max(n, m)``."""
    N = max(n, n if m is None else m)
    return 2.0 * N * N * math.exp(-r * delta * delta / (2.0 * psi * psi))


def uniform_bound(r, delta, constants, d, sup_kxx=1.0):
    """Failure probability bound over the whole domain.

    ``(D / kappa)^2 C / delta^2 exp(-r delta^2 / (2 psi^2 (d + 1)))`` with
    ``C = 2^9 psi (4 + psi^2 / r) V sup k(x, x)``.
    """
    psi, V = constants.psi, constants.V
    C = 2.0**9 * psi * (4.0 + psi * psi / r) * V * sup_kxx
    pref = (constants.D / constants.kappa_lb) ** 2 * C / delta**2
    return pref * math.exp(-r * delta * delta / (2.0 * psi * psi * (d + 1)))


@dataclass(frozen=True)
class RatioError:
    max_ratio_dev: float
    argmax: tuple


def ratio_error(features, X, Y):
    """``max |k_theta(x, y) / k(x, y) - 1|`` over the grid ``X x Y`` and where it is attained."""
    X = np.atleast_2d(np.asarray(getattr(X, "points", X), dtype=np.float64))
    Y = np.atleast_2d(np.asarray(getattr(Y, "points", Y), dtype=np.float64))
    dev = np.abs(features.kernel(X, Y) / exact_kernel(features.spec, X, Y) - 1.0)
    i, j = np.unravel_index(int(np.argmax(dev)), dev.shape)
    return RatioError(float(dev[i, j]), (int(i), int(j)))


def q_theta(K_min):
    """``Q_theta = -log min k_theta`` from the smallest sampled-kernel entry."""
    if not K_min > 0:
        raise ValueError("kernel minimum must be positive")
    return -math.log(K_min)


def q_theta_bound(C_inf, epsilon, delta):
    """High-probability bound ``C_inf^2 / eps + log(2 + delta / eps)`` on ``Q_theta``."""
    return C_inf**2 / epsilon + math.log(2.0 + delta / epsilon)


def ratio_vs_difference(features, X, Y):
    """Empirical feature-count inflation when a ratio guarantee comes from a difference bound.

    Returns ``(psi_hat, phi_prime_hat, factor)`` where ``psi_hat`` is the largest
    per-feature ratio ``phi(x,u)^T phi(y,u) / k(x,y)``, ``phi_prime_hat`` the largest
    product divided by ``min k``, and ``factor = (phi_prime_hat / psi_hat)^2``.
    """
    X = np.atleast_2d(np.asarray(getattr(X, "points", X), dtype=np.float64))
    Y = np.atleast_2d(np.asarray(getattr(Y, "points", Y), dtype=np.float64))
    r = features.r
    fx = embed_points(features, X) * math.sqrt(r)
    fy = embed_points(features, Y) * math.sqrt(r)
    p = features.p
    k = exact_kernel(features.spec, X, Y)
    psi_hat, prod_max = 0.0, 0.0
    for t in range(r):
        prod = fx[:, t * p : (t + 1) * p] @ fy[:, t * p : (t + 1) * p].T
        prod_max = max(prod_max, float(prod.max()))
        psi_hat = max(psi_hat, float((prod / k).max()))
    phi_prime = prod_max / float(k.min())
    return psi_hat, phi_prime, (phi_prime / psi_hat) ** 2
