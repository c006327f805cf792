"""Sinkhorn iterations, the accelerated variant, dual values and Sinkhorn divergences.

All solvers only touch the kernel through ``matvec``/``rmatvec``, so a
:class:`~linot.core.FactorizedKernel` keeps every iteration at ``O(r (n + m))``.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import DualPotentials, WEIGHT_SUM_TOL
from .errors import (
    DivergenceSolveError,
    KernelUnderflow,
    LengthMismatch,
    LineSearchStall,
    NotConverged,
    NumericalBreakdown,
    PlanTooLarge,
)

DEFAULT_PLAN_CAP = 4096 * 4096


@dataclass(frozen=True)
class SolveConfig:
    """Stopping rule and numerical safeguards.

    Parameters
    ----------
    marginal_tol : float
        Stop once ``||v * K^T u - b||_1 < marginal_tol``.
    max_iters : int
    stabilization_threshold : float
        A scaling vector whose max exceeds this is divided by its max and the
        log of the max moved into the potentials' offset.
    check_every : int
        Test the stopping rule every this many iterations.
    plan_cap : int
        Largest ``n * m`` for which a factorized plan may be materialized.
    lipschitz_cap : float
        The accelerated solver gives up when its smoothness estimate exceeds this.
    """

    marginal_tol: float = 1e-9
    max_iters: int = 10_000
    stabilization_threshold: float = 1e100
    check_every: int = 10
    plan_cap: int = DEFAULT_PLAN_CAP
    lipschitz_cap: float = 1e12

    def __post_init__(self):
        for name in ("marginal_tol", "max_iters", "stabilization_threshold",
                     "check_every", "plan_cap", "lipschitz_cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class SolveReport:
    """Result of a solve.

    ``w_hat`` is the dual estimate ``eps (a^T log u + b^T log v)``. The
    accelerated solver also fills ``primal`` (averaged plan, when small enough
    to store) and ``lipschitz`` (final smoothness estimate).
    """

    potentials: DualPotentials
    w_hat: float
    iters: int
    marginal_residual: float
    wall_time: float
    stabilizations: int
    converged: bool
    epsilon: float = 1.0
    method: str = "sinkhorn"
    primal: np.ndarray = field(default=None, repr=False)
    lipschitz: float = None

    def to_dict(self, include_potentials=False):
        out = {
            "method": self.method,
            "epsilon": self.epsilon,
            "w_hat": self.w_hat,
            "iters": self.iters,
            "marginal_residual": self.marginal_residual,
            "wall_time": self.wall_time,
            "stabilizations": self.stabilizations,
            "converged": self.converged,
            "log_offset_u": self.potentials.log_offset_u,
            "log_offset_v": self.potentials.log_offset_v,
        }
        if self.lipschitz is not None:
            out["lipschitz"] = self.lipschitz
        if include_potentials:
            out["alpha"] = self.potentials.alpha(self.epsilon).tolist()
            out["beta"] = self.potentials.beta(self.epsilon).tolist()
        return out

    def to_json(self, include_potentials=False, **kw):
        return json.dumps(self.to_dict(include_potentials), **kw)

    def dump_potentials(self, path):
        """Save ``alpha`` and ``beta`` as float64 arrays in an ``.npz`` archive."""
        np.savez(path, alpha=self.potentials.alpha(self.epsilon),
                 beta=self.potentials.beta(self.epsilon))


def _check_inputs(K, a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    n, m = K.shape
    if a.shape[0] != n or b.shape[0] != m:
        raise LengthMismatch(f"kernel is {n}x{m} but |a|={a.shape[0]}, |b|={b.shape[0]}")
    for name, w in (("a", a), ("b", b)):
        if not np.all(w > 0) or abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"{name} must be strictly positive and sum to 1")
    if getattr(K, "has_zeros", False):
        raise KernelUnderflow("kernel has entries equal to 0; increase epsilon")
    return a, b


def _guard(vec, what):
    if not np.all(np.isfinite(vec)) or not np.all(vec > 0):
        raise NumericalBreakdown(f"{what} has zero or non-finite entries")
    return vec


def sinkhorn(K, a, b, config=None, epsilon=1.0):
    """Alternate ``v <- b / K^T u`` and ``u <- a / K v`` starting from ``u = 1``.

    Scalings exceeding ``config.stabilization_threshold`` are renormalized and
    their log stored in the potentials' offsets.

    Warns
    -----
    NotConverged
        When ``max_iters`` is reached; the report is still returned.

    Raises
    ------
    NumericalBreakdown
        If a kernel product has zero or non-finite entries.
    KernelUnderflow
        For dense kernels with exact zeros.
    """
    config = config or SolveConfig()
    a, b = _check_inputs(K, a, b)
    thr = config.stabilization_threshold
    t0 = time.perf_counter()
    u = np.ones(K.shape[0])
    off_u = off_v = 0.0
    stabs = 0
    residual = math.inf
    Ktu = _guard(K.rmatvec(u), "K^T u")
    it = 0
    for it in range(1, config.max_iters + 1):
        v = b / Ktu
        off_v = -off_u
        vmax = v.max()
        if vmax > thr:
            v /= vmax
            off_v += math.log(vmax)
            stabs += 1
        u = a / _guard(K.matvec(v), "K v")
        off_u = -off_v
        umax = u.max()
        if umax > thr:
            u /= umax
            off_u += math.log(umax)
            stabs += 1
        # K^T u is needed by the next half-step anyway, so the check is free
        Ktu = _guard(K.rmatvec(u), "K^T u")
        if it == 1 or it % config.check_every == 0 or it == config.max_iters:
            residual = float(np.abs(v * Ktu * math.exp(off_u + off_v) - b).sum())
            if residual < config.marginal_tol:
                break
    converged = residual < config.marginal_tol
    pots = DualPotentials(u, v, off_u, off_v)
    report = SolveReport(
        potentials=pots,
        w_hat=evaluate_dual(pots, a, b, epsilon),
        iters=it,
        marginal_residual=residual,
        wall_time=time.perf_counter() - t0,
        stabilizations=stabs,
        converged=converged,
        epsilon=epsilon,
        method="sinkhorn",
    )
    if not converged:
        warnings.warn(
            NotConverged(f"sinkhorn stopped at {it} iterations, residual {residual:.3e}"),
            stacklevel=2,
        )
    return report


def evaluate_dual(potentials, a, b, epsilon):
    """Dual estimate ``eps (a^T log u + b^T log v)`` including the log offsets."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(epsilon * (a @ potentials.log_u() + b @ potentials.log_v()))


def coupling_mass(K, potentials):
    """``u^T K v`` for the effective scalings."""
    inner = float(potentials.u @ K.matvec(potentials.v))
    return inner * math.exp(potentials.log_offset_u + potentials.log_offset_v)


def dual_objective(K, potentials, a, b, epsilon):
    """Full dual ``eps a^T log u + eps b^T log v - eps u^T K v + eps``."""
    return evaluate_dual(potentials, a, b, epsilon) - epsilon * coupling_mass(K, potentials) + epsilon


def plan(K, potentials, cap=DEFAULT_PLAN_CAP):
    """Transport plan ``diag(u) K diag(v)``.

    Raises
    ------
    PlanTooLarge
        For a factorized kernel with ``n * m > cap``.
    """
    n, m = K.shape
    if K.cost_class != "quadratic" and n * m > cap:
        raise PlanTooLarge(f"{n}x{m} plan exceeds cap {cap}")
    u = potentials.u * math.exp(potentials.log_offset_u)
    v = potentials.v * math.exp(potentials.log_offset_v)
    return u[:, None] * K.materialize() * v[None, :]


def primal_objective(P, C, epsilon):
    """``<P, C> - eps H(P) + eps`` with ``H(P) = -sum P (log P - 1)``."""
    P = np.asarray(P, dtype=np.float64)
    pos = P > 0
    neg_entropy = float(np.sum(P[pos] * (np.log(P[pos]) - 1.0)))
    return float(np.sum(P * C)) + epsilon * neg_entropy + epsilon


# -- smooth dual --------------------------------------------------------------


def _log_partition(K, eta1, eta2):
    """``log <e^eta1, K e^eta2>`` and the shifted pieces needed by gradients."""
    s1, s2 = float(eta1.max()), float(eta2.max())
    e1 = np.exp(eta1 - s1)
    e2 = np.exp(eta2 - s2)
    Ke2 = K.matvec(e2)
    Z = float(e1 @ Ke2)
    if not (Z > 0 and math.isfinite(Z)):
        raise NumericalBreakdown("log-partition is not finite")
    return math.log(Z) + s1 + s2, e1, e2, Ke2, Z


def smooth_dual(K, alpha, beta, a, b, epsilon):
    """``F(alpha, beta) = a^T alpha + b^T beta - eps log <e^{alpha/eps}, K e^{beta/eps}>``.

    Invariant under ``(alpha + c, beta)`` shifts, and equal to the dual estimate
    wherever ``u^T K v = 1``.
    """
    logZ = _log_partition(K, np.asarray(alpha) / epsilon, np.asarray(beta) / epsilon)[0]
    return float(np.dot(a, alpha) + np.dot(b, beta) - epsilon * logZ)


def smooth_dual_grad(K, alpha, beta, a, b, epsilon):
    """Gradient of :func:`smooth_dual`: ``(a - P 1, b - P^T 1)`` with ``P`` the normalized plan."""
    _, e1, e2, Ke2, Z = _log_partition(K, np.asarray(alpha) / epsilon, np.asarray(beta) / epsilon)
    row = e1 * Ke2 / Z
    col = e2 * K.rmatvec(e1) / Z
    return a - row, b - col


def empirical_lipschitz(K, a, b, epsilon, n_segments=50, scale=1.0, seed=0):
    """Largest ``||grad F(z1) - grad F(z2)|| / ||z1 - z2||`` over random segments."""
    rng = np.random.default_rng(seed)
    n, m = K.shape
    best = 0.0
    for _ in range(n_segments):
        z1 = rng.normal(scale=scale * epsilon, size=n + m)
        z2 = z1 + rng.normal(scale=10.0 ** rng.uniform(-4, 0) * scale * epsilon, size=n + m)
        g1 = np.concatenate(smooth_dual_grad(K, z1[:n], z1[n:], a, b, epsilon))
        g2 = np.concatenate(smooth_dual_grad(K, z2[:n], z2[n:], a, b, epsilon))
        best = max(best, float(np.linalg.norm(g1 - g2) / np.linalg.norm(z1 - z2)))
    return best


class _EtaObjective:
    """``phi(eta) = log <e^eta1, K e^eta2> - a^T eta1 - b^T eta2`` (equals ``-F / eps``)."""

    def __init__(self, K, a, b):
        self.K, self.a, self.b = K, a, b

    def value_grad(self, eta1, eta2):
        logZ, e1, e2, Ke2, Z = _log_partition(self.K, eta1, eta2)
        g1 = e1 * Ke2 / Z - self.a
        g2 = e2 * self.K.rmatvec(e1) / Z - self.b
        val = logZ - self.a @ eta1 - self.b @ eta2
        return val, g1, g2, (e1, e2, Z)

    def value(self, eta1, eta2):
        return _log_partition(self.K, eta1, eta2)[0] - self.a @ eta1 - self.b @ eta2

    def block_min(self, eta1, eta2, block):
        """Exact minimizer over one block, normalized so that the partition is 1."""
        if block == 0:
            s2 = float(eta2.max())
            Ke = _guard(self.K.matvec(np.exp(eta2 - s2)), "K e^eta2")
            return np.log(self.a) - np.log(Ke) - s2, eta2
        s1 = float(eta1.max())
        Ke = _guard(self.K.rmatvec(np.exp(eta1 - s1)), "K^T e^eta1")
        return eta1, np.log(self.b) - np.log(Ke) - s1


def accelerated_sinkhorn(K, a, b, config=None, epsilon=1.0, L0=1.0):
    """Adaptive accelerated alternating minimization of the smooth dual.

    Works in ``eta = (alpha, beta) / eps`` and minimizes ``phi = -F / eps``.
    Each step halves the smoothness estimate ``L``, then doubles it until the
    sufficient-decrease test ``phi(eta+) <= phi(lambda) - ||grad phi(lambda)||^2 / (2L)``
    passes. ``eta+`` is ``lambda`` with the block of larger gradient norm
    replaced by its exact minimizer.

    Returns the best dual point seen. ``report.primal`` holds the averaged
    plan when ``n * m <= config.plan_cap``.

    Raises
    ------
    LineSearchStall
        When ``L`` exceeds ``config.lipschitz_cap``.
    """
    config = config or SolveConfig()
    if not L0 > 0:
        raise ValueError("L0 must be positive")
    a, b = _check_inputs(K, a, b)
    t0 = time.perf_counter()
    n, m = K.shape
    obj = _EtaObjective(K, a, b)
    track_primal = n * m <= config.plan_cap
    Kdense = K.materialize() if track_primal else None
    primal = np.zeros((n, m)) if track_primal else None

    eta1, eta2 = np.zeros(n), np.zeros(m)
    zeta1, zeta2 = eta1.copy(), eta2.copy()
    A = 0.0
    L = float(L0)

    def residual_at(e1, e2):
        _, g1, g2, _ = obj.value_grad(e1, e2)
        return float(np.abs(g1).sum() + np.abs(g2).sum())

    # best point overall and best point meeting the tolerance; the scheme is
    # not monotone, so the lowest objective need not be the most feasible
    residual = residual_at(eta1, eta2)
    best_any = best_ok = None

    def record(e1, e2, res):
        nonlocal best_any, best_ok
        cand = (obj.value(e1, e2), e1, e2, res)
        if best_any is None or cand[0] < best_any[0]:
            best_any = cand
        if res < config.marginal_tol and (best_ok is None or cand[0] < best_ok[0]):
            best_ok = cand

    record(eta1, eta2, residual)
    it = 0
    while residual >= config.marginal_tol and it < config.max_iters:
        it += 1
        L /= 2.0
        while True:
            step = 1.0 / (2.0 * L) + math.sqrt(1.0 / (4.0 * L * L) + A / L)
            A_next = A + step
            tau = step / A_next
            lam1 = tau * zeta1 + (1.0 - tau) * eta1
            lam2 = tau * zeta2 + (1.0 - tau) * eta2
            f_lam, g1, g2, (e1, e2, Z) = obj.value_grad(lam1, lam2)
            sq1, sq2 = float(g1 @ g1), float(g2 @ g2)
            block = 0 if sq1 >= sq2 else 1
            new1, new2 = obj.block_min(lam1, lam2, block)
            # slack keeps round-off near the optimum from inflating L
            slack = 8.0 * np.finfo(float).eps * max(1.0, abs(f_lam))
            f_new = obj.value(new1, new2)
            if f_new <= f_lam - (sq1 + sq2) / (2.0 * L) + slack:
                break
            L *= 2.0
            if L > config.lipschitz_cap:
                raise LineSearchStall(f"smoothness estimate exceeded {config.lipschitz_cap:g}")
        zeta1 = zeta1 - step * g1
        zeta2 = zeta2 - step * g2
        if track_primal:
            P_lam = (e1[:, None] * Kdense * e2[None, :]) / Z
            primal = (step * P_lam + A * primal) / A_next
        eta1, eta2, A = new1, new2, A_next
        stalled = f_lam - f_new <= slack
        if stalled or it % config.check_every == 0 or it == config.max_iters:
            residual = residual_at(eta1, eta2)
            record(eta1, eta2, residual)
        if stalled:
            break

    # once the objective decrease is at round-off level the momentum carries no
    # information; finish with plain alternating exact block steps
    block = 1
    while residual >= config.marginal_tol and it < config.max_iters:
        it += 1
        eta1, eta2 = obj.block_min(eta1, eta2, block)
        block = 1 - block
        if it % config.check_every == 0 or it == config.max_iters:
            residual = residual_at(eta1, eta2)
            record(eta1, eta2, residual)

    f_best, b1, b2, residual = best_ok if best_ok is not None else best_any
    # normalize so that u^T K v = 1 and the dual estimate equals -eps phi
    logZ = _log_partition(K, b1, b2)[0]
    b1 = b1 - logZ
    converged = residual < config.marginal_tol
    pots = DualPotentials.from_potentials(epsilon * b1, epsilon * b2, epsilon)
    report = SolveReport(
        potentials=pots,
        w_hat=-epsilon * f_best,
        iters=it,
        marginal_residual=residual,
        wall_time=time.perf_counter() - t0,
        stabilizations=0,
        converged=converged,
        epsilon=epsilon,
        method="accelerated",
        primal=primal,
        lipschitz=L,
    )
    if not converged:
        warnings.warn(
            NotConverged(f"accelerated sinkhorn stopped at {it} iterations, residual {residual:.3e}"),
            stacklevel=2,
        )
    return report


# -- divergence and diagnostics ------------------------------------------------


def sinkhorn_divergence(mu, nu, kernel_builder, config=None, epsilon=1.0, solver=None):
    """``W(mu, nu) - (W(mu, mu) + W(nu, nu)) / 2``.

    ``kernel_builder(mu, nu)`` returns the kernel operator of a pair. A failed
    solve is re-raised as :class:`DivergenceSolveError` naming the pair.
    """
    solver = solver or sinkhorn
    values = {}
    for which, (p, q) in (("xy", (mu, nu)), ("xx", (mu, mu)), ("yy", (nu, nu))):
        try:
            K = kernel_builder(p, q)
            values[which] = solver(K, p.weights, q.weights, config, epsilon=epsilon).w_hat
        except Exception as exc:  # noqa: BLE001 - tagged and re-raised
            raise DivergenceSolveError(which, exc) from exc
    return values["xy"] - 0.5 * (values["xx"] + values["yy"])


@dataclass(frozen=True)
class RangeCheck:
    range_alpha: float
    range_beta: float
    bound: float
    violated: bool


def potential_range_check(potentials, K_stats, a, b, epsilon):
    """Compare potential ranges with ``eps R(K)``, ``R(K) = -log(iota min K / max K)``.

    ``K_stats`` is ``(min K, max K)``, e.g. from ``K.extremes()``; ``iota`` is the
    smallest weight of either measure.
    """
    kmin, kmax = K_stats
    iota = min(float(np.min(a)), float(np.min(b)))
    bound = -epsilon * math.log(iota * kmin / kmax)
    alpha = potentials.alpha(epsilon)
    beta = potentials.beta(epsilon)
    ra = float(alpha.max() - alpha.min())
    rb = float(beta.max() - beta.min())
    slack = 1e-9 * max(1.0, abs(bound))
    return RangeCheck(ra, rb, bound, ra > bound + slack or rb > bound + slack)
