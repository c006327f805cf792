"""Positive feature maps ``phi(x, u)`` whose ``rho``-average reproduces a kernel.

Two maps are shipped:

* ``gaussian`` (p = 1): ``E_u[phi(x,u) phi(y,u)] = exp(-||x-y||^2 / eps)`` with
  ``u ~ N(0, (q eps / 4) I)``. Certified on the ball ``B(0, R)``.
* ``arccos_perturbed`` (p = 2): a rectified-polynomial slot plus a constant ``sqrt(kappa)``
  slot, reproducing the arc-cosine kernel of degree ``s`` shifted by ``kappa``,
  with ``u ~ N(0, sigma^2 I)``.

``custom`` maps wrap user callables (see :class:`CustomMap`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import JacobianUnavailable, UnsupportedSpec
from .lambert import lambert_w0

FEATURE_KINDS = ("gaussian", "arccos_perturbed", "custom")
_KIND_ALIASES = {"arccos": "arccos_perturbed"}


@dataclass(frozen=True)
class CustomMap:
    """User-supplied feature map.

    ``phi(X, U)`` receives points ``(n, d)`` and parameters ``(r, d_u)`` and
    returns ``(n, r, p)`` nonnegative values. ``transform`` turns standard
    normals ``(r, d_u)`` into parameters (identity by default). Jacobians
    ``dphi_dx(X, U) -> (n, r, p, d)`` and ``dphi_du(X, U) -> (n, r, p, d_u)``
    and ``kernel(X, Y) -> (n, m)`` are optional.
    """

    phi: Callable
    p: int = 1
    param_dim: Optional[int] = None
    transform: Optional[Callable] = None
    dphi_dx: Optional[Callable] = None
    dphi_du: Optional[Callable] = None
    kernel: Optional[Callable] = None
    constants: Optional[object] = None


@dataclass(frozen=True)
class FeatureMapSpec:
    """Which positive map to use and on what domain.

    ``radius`` bounds the point norms (required by the gaussian map);
    ``s``, ``kappa``, ``sigma`` parametrize the arccos map.
    """

    kind: str
    epsilon: float
    radius: float
    dim: int
    s: int = 1
    kappa: float = 0.1
    sigma: float = 2.0
    custom: Optional[CustomMap] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", _KIND_ALIASES.get(self.kind, self.kind))
        if self.kind not in FEATURE_KINDS:
            raise UnsupportedSpec(f"unknown feature kind {self.kind!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not self.radius > 0:
            raise ValueError("radius must be > 0")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if self.kind == "arccos_perturbed":
            if int(self.s) != self.s or self.s < 0:
                raise ValueError("arccos degree s must be a nonnegative integer")
            if not self.kappa > 0:
                raise ValueError("arccos requires kappa > 0")
            if not self.sigma > 1:
                raise ValueError("arccos requires sigma > 1")
        if self.kind == "custom" and self.custom is None:
            raise UnsupportedSpec("custom kind needs a CustomMap")

    @classmethod
    def gaussian(cls, epsilon, radius, dim):
        return cls("gaussian", epsilon, radius, dim)

    @classmethod
    def arccos(cls, s, kappa, sigma, dim, radius=1.0, epsilon=1.0):
        return cls("arccos_perturbed", epsilon, radius, dim, s=s, kappa=kappa, sigma=sigma)

    @property
    def p(self):
        if self.kind == "gaussian":
            return 1
        if self.kind == "arccos_perturbed":
            return 2
        return self.custom.p

    @property
    def param_dim(self):
        if self.kind == "custom" and self.custom.param_dim is not None:
            return self.custom.param_dim
        return self.dim

    @property
    def q(self):
        """Gaussian bandwidth ratio ``q = R^2 / (2 eps d W0(R^2 / (eps d)))``."""
        z = self.radius**2 / (self.epsilon * self.dim)
        return z / (2.0 * lambert_w0(z))

    @property
    def sampling_std(self):
        """Standard deviation of each coordinate of ``u ~ rho``."""
        if self.kind == "gaussian":
            return float(np.sqrt(self.q * self.epsilon / 4.0))
        if self.kind == "arccos_perturbed":
            return float(self.sigma)
        return 1.0

    def to_dict(self):
        out = {"kind": self.kind, "epsilon": self.epsilon, "R": self.radius, "d": self.dim}
        if self.kind == "arccos_perturbed":
            out.update(s=self.s, kappa=self.kappa, sigma=self.sigma)
        if self.kind == "custom":
            raise UnsupportedSpec("custom feature maps are not serializable")
        return out

    @classmethod
    def from_dict(cls, data):
        kw = dict(kind=data["kind"], epsilon=float(data["epsilon"]),
                  radius=float(data["R"]), dim=int(data["d"]))
        for key in ("s", "kappa", "sigma"):
            if key in data:
                kw[key] = data[key]
        return cls(**kw)

    def to_json(self):
        return json.dumps(self.to_dict())


# -- gaussian -----------------------------------------------------------------


def _gaussian_log_phi(spec, X, U, log_scale=0.0):
    """``log phi(x_i, u_k) + log_scale`` for all pairs, shape ``(n, r)``."""
    eps, q, d = spec.epsilon, spec.q, spec.dim
    X = np.atleast_2d(X)
    U = np.atleast_2d(U)
    sx = np.einsum("nd,nd->n", X, X)
    su = np.einsum("rd,rd->r", U, U)
    # log phi = d/4 log(2q) - (2/eps)(|x|^2 + |u|^2 - 2 x.u) + |u|^2 / (eps q), built in place
    out = X @ U.T
    out *= 4.0 / eps
    out += (0.25 * d * np.log(2.0 * q) + log_scale - (2.0 / eps) * sx)[:, None]
    out += (su * (1.0 / (eps * q) - 2.0 / eps))[None, :]
    return out


def gaussian_feature(x, u, spec):
    """Scalar gaussian feature ``(2q)^{d/4} exp(-2||x-u||^2/eps) exp(||u||^2/(eps q))``."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    eps, q, d = spec.epsilon, spec.q, spec.dim
    return float(
        (2.0 * q) ** (d / 4.0)
        * np.exp(-2.0 / eps * np.sum((x - u) ** 2))
        * np.exp(np.sum(u**2) / (eps * q))
    )


def gaussian_kernel(X, Y, epsilon):
    from ..core import squared_distances

    return np.exp(-squared_distances(np.atleast_2d(X), np.atleast_2d(Y)) / epsilon)


# -- arc-cosine ---------------------------------------------------------------


def _arccos_slot(spec, X, U):
    """First slot of the arccos map, shape ``(n, r)``."""
    X = np.atleast_2d(X)
    U = np.atleast_2d(U)
    s, sigma, d = spec.s, spec.sigma, spec.dim
    proj = X @ U.T
    pos = np.maximum(proj, 0.0)
    rect = (proj > 0).astype(np.float64) if s == 0 else pos**s
    su = np.einsum("rd,rd->r", U, U)
    damp = np.exp(-0.25 * su * (1.0 - 1.0 / sigma**2))
    return sigma ** (d / 2.0) * np.sqrt(2.0) * rect * damp[None, :]


def arccos_feature(x, u, spec):
    """The 2-slot arccos feature ``(sigma^{d/2} sqrt2 max(0,u.x)^s e^{-|u|^2(1-1/sigma^2)/4}, sqrt kappa)``."""
    slot = _arccos_slot(spec, np.asarray(x, float)[None, :], np.asarray(u, float)[None, :])
    return np.array([slot[0, 0], np.sqrt(spec.kappa)])


def arccos_J(s, theta):
    """Angular part ``J_s`` of the arc-cosine kernel for ``s`` in {0, 1, 2}."""
    theta = np.asarray(theta, dtype=np.float64)
    if s == 0:
        return np.pi - theta
    if s == 1:
        return np.sin(theta) + (np.pi - theta) * np.cos(theta)
    if s == 2:
        c = np.cos(theta)
        return 3.0 * np.sin(theta) * c + (np.pi - theta) * (1.0 + 2.0 * c * c)
    raise UnsupportedSpec("closed-form arc-cosine kernel is shipped for s <= 2 only")


def arccos_kernel(X, Y, s, kappa=0.0):
    """``k_s(x, y) + kappa`` with ``k_s = ||x||^s ||y||^s J_s(angle) / pi``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    nx = np.linalg.norm(X, axis=1)
    ny = np.linalg.norm(Y, axis=1)
    denom = np.outer(nx, ny)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom > 0, (X @ Y.T) / np.where(denom > 0, denom, 1.0), 1.0)
    theta = np.arccos(np.clip(cos, -1.0, 1.0))
    ks = denom**s * arccos_J(s, theta) / np.pi
    if s > 0:
        ks = np.where(denom > 0, ks, 0.0)
    return ks + kappa


# -- dispatch -----------------------------------------------------------------


def feature_values(spec, X, U, scale=1.0):
    """All feature values ``scale * phi(x_i, u_k)``, shape ``(n, r, p)``."""
    if spec.kind == "gaussian":
        vals = _gaussian_log_phi(spec, X, U, np.log(scale))
        return np.exp(vals, out=vals)[:, :, None]
    if spec.kind == "arccos_perturbed":
        slot = _arccos_slot(spec, X, U)
        out = np.empty(slot.shape + (2,))
        out[..., 0] = slot * scale
        out[..., 1] = np.sqrt(spec.kappa) * scale
        return out
    vals = np.asarray(spec.custom.phi(np.atleast_2d(X), np.atleast_2d(U)), dtype=np.float64)
    return scale * vals.reshape(np.atleast_2d(X).shape[0], np.atleast_2d(U).shape[0], spec.p)


def exact_kernel(spec, X, Y):
    """The kernel the map reproduces in expectation, or ``UnsupportedSpec``."""
    if spec.kind == "gaussian":
        return gaussian_kernel(X, Y, spec.epsilon)
    if spec.kind == "arccos_perturbed":
        return arccos_kernel(X, Y, spec.s, spec.kappa)
    if spec.custom.kernel is None:
        raise UnsupportedSpec("custom map has no exact kernel")
    return np.asarray(spec.custom.kernel(np.atleast_2d(X), np.atleast_2d(Y)), dtype=np.float64)


def jacobian_x(spec, X, U):
    """``d phi(x_i, u_k) / d x_i``, shape ``(n, r, p, d)``."""
    X = np.atleast_2d(X)
    U = np.atleast_2d(U)
    if spec.kind == "gaussian":
        phi = np.exp(_gaussian_log_phi(spec, X, U))
        diff = X[:, None, :] - U[None, :, :]
        return (-4.0 / spec.epsilon * diff * phi[:, :, None])[:, :, None, :]
    if spec.kind == "arccos_perturbed":
        out = np.zeros((X.shape[0], U.shape[0], 2, spec.dim))
        if spec.s == 0:
            return out
        s, sigma, d = spec.s, spec.sigma, spec.dim
        proj = np.maximum(X @ U.T, 0.0)
        su = np.einsum("rd,rd->r", U, U)
        damp = np.exp(-0.25 * su * (1.0 - 1.0 / sigma**2))
        coef = sigma ** (d / 2.0) * np.sqrt(2.0) * s * proj ** (s - 1) * (proj > 0) * damp[None, :]
        out[:, :, 0, :] = coef[:, :, None] * U[None, :, :]
        return out
    if spec.custom.dphi_dx is None:
        raise JacobianUnavailable("custom map has no x-jacobian")
    return np.asarray(spec.custom.dphi_dx(X, U), dtype=np.float64)


def jacobian_u(spec, X, U):
    """``d phi(x_i, u_k) / d u_k``, shape ``(n, r, p, d_u)``."""
    X = np.atleast_2d(X)
    U = np.atleast_2d(U)
    if spec.kind == "gaussian":
        eps, q = spec.epsilon, spec.q
        phi = np.exp(_gaussian_log_phi(spec, X, U))
        diff = X[:, None, :] - U[None, :, :]
        g = 4.0 / eps * diff + 2.0 / (eps * q) * U[None, :, :]
        return (g * phi[:, :, None])[:, :, None, :]
    if spec.kind == "arccos_perturbed":
        s, sigma, d = spec.s, spec.sigma, spec.dim
        out = np.zeros((X.shape[0], U.shape[0], 2, d))
        slot = _arccos_slot(spec, X, U)
        out[:, :, 0, :] = -0.5 * (1.0 - 1.0 / sigma**2) * slot[:, :, None] * U[None, :, :]
        if s > 0:
            proj = np.maximum(X @ U.T, 0.0)
            su = np.einsum("rd,rd->r", U, U)
            damp = np.exp(-0.25 * su * (1.0 - 1.0 / sigma**2))
            coef = sigma ** (d / 2.0) * np.sqrt(2.0) * s * proj ** (s - 1) * (proj > 0) * damp[None, :]
            out[:, :, 0, :] += coef[:, :, None] * X[:, None, :]
        return out
    if spec.custom.dphi_du is None:
        raise JacobianUnavailable("custom map has no parameter jacobian")
    return np.asarray(spec.custom.dphi_du(X, U), dtype=np.float64)
