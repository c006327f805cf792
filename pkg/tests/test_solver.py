import math
import warnings

import numpy as np
import pytest

from linot.core import (
    CostSpec,
    DenseKernel,
    DiscreteMeasure,
    DualPotentials,
    cost_matrix,
    gibbs_kernel,
)
from linot.errors import (
    DivergenceSolveError,
    KernelUnderflow,
    LengthMismatch,
    NotConverged,
    PlanTooLarge,
)
from linot.features import FeatureMapSpec, factorized_kernel, sample_features
from linot.solver import (
    SolveConfig,
    coupling_mass,
    dual_objective,
    evaluate_dual,
    plan,
    potential_range_check,
    primal_objective,
    sinkhorn,
    sinkhorn_divergence,
    smooth_dual,
    smooth_dual_grad,
)
from oracles import reduced_dual_value

TIGHT = SolveConfig(marginal_tol=1e-13, max_iters=100_000, check_every=1)

# entropic OT values from Newton on the reduced dual in 50-digit arithmetic
W_SYM_2X2 = -1.0064088680781682
W_ASYM_2X3 = -0.23085500902330194
C_2X3 = np.array([[0.0, 1.0, 0.5], [2.0, 0.3, 1.0]])


def test_one_point_closed_form():
    eps = 0.3
    K = DenseKernel([[math.exp(-2.0 / eps)]])
    rep = sinkhorn(K, [1.0], [1.0], epsilon=eps)
    assert rep.iters == 1 and rep.converged
    assert rep.w_hat == pytest.approx(2.0, rel=1e-14)
    assert plan(K, rep.potentials)[0, 0] == pytest.approx(1.0, rel=1e-14)


def test_symmetric_2x2():
    C = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert reduced_dual_value(C, [0.5, 0.5], [0.5, 0.5], 1.0) == pytest.approx(W_SYM_2X2, abs=1e-15)
    assert W_SYM_2X2 == pytest.approx(-math.log(2 + 2 / math.e), abs=1e-15)
    rep = sinkhorn(gibbs_kernel(C, 1.0), [0.5, 0.5], [0.5, 0.5], TIGHT, epsilon=1.0)
    assert rep.w_hat == pytest.approx(W_SYM_2X2, abs=1e-13)


def test_asymmetric_2x3():
    a, b, eps = [0.3, 0.7], [0.2, 0.5, 0.3], 0.5
    assert reduced_dual_value(C_2X3, a, b, eps) == pytest.approx(W_ASYM_2X3, abs=1e-15)
    rep = sinkhorn(gibbs_kernel(C_2X3, eps), a, b, TIGHT, epsilon=eps)
    assert rep.w_hat == pytest.approx(W_ASYM_2X3, abs=1e-12)
    P = plan(gibbs_kernel(C_2X3, eps), rep.potentials)
    np.testing.assert_allclose(P.sum(1), a, atol=1e-12)
    np.testing.assert_allclose(P.sum(0), b, atol=1e-12)
    # strong duality at the optimum
    assert primal_objective(P, C_2X3, eps) == pytest.approx(W_ASYM_2X3, abs=1e-11)


def test_normalized_after_one_iteration():
    rng = np.random.default_rng(0)
    K = DenseKernel(rng.uniform(0.1, 1.0, (5, 7)))
    with pytest.warns(NotConverged):
        rep = sinkhorn(K, np.full(5, 0.2), np.full(7, 1 / 7), SolveConfig(max_iters=1), epsilon=1.0)
    assert coupling_mass(K, rep.potentials) == pytest.approx(1.0, abs=1e-14)


def test_evaluate_dual_trivial():
    p = DualPotentials(np.ones(2), np.ones(3))
    assert evaluate_dual(p, [0.5, 0.5], [1 / 3] * 3, 0.7) == 0.0


def test_dual_objective_equals_w_hat_at_convergence():
    a, b, eps = [0.3, 0.7], [0.2, 0.5, 0.3], 0.5
    K = gibbs_kernel(C_2X3, eps)
    rep = sinkhorn(K, a, b, TIGHT, epsilon=eps)
    assert dual_objective(K, rep.potentials, a, b, eps) == pytest.approx(rep.w_hat, abs=1e-13)


def test_smooth_dual_shift_invariant_and_gradient():
    rng = np.random.default_rng(1)
    K = DenseKernel(rng.uniform(0.2, 1.0, (4, 3)))
    a, b, eps = np.full(4, 0.25), np.array([0.2, 0.3, 0.5]), 0.4
    al, be = rng.normal(size=4), rng.normal(size=3)
    f = smooth_dual(K, al, be, a, b, eps)
    assert smooth_dual(K, al + 1.3, be, a, b, eps) == pytest.approx(f, abs=1e-13)
    ga, gb = smooth_dual_grad(K, al, be, a, b, eps)
    h = 1e-6
    for i in range(4):
        e = np.zeros(4)
        e[i] = h
        fd = (smooth_dual(K, al + e, be, a, b, eps) - smooth_dual(K, al - e, be, a, b, eps)) / (2 * h)
        assert ga[i] == pytest.approx(fd, abs=1e-8)
    assert gb.sum() + ga.sum() == pytest.approx(0.0, abs=1e-14)


def test_factorized_matches_dense_solve():
    rng = np.random.default_rng(2)
    spec = FeatureMapSpec.gaussian(0.5, 1.0, 2)
    mu = DiscreteMeasure(rng.uniform(-0.5, 0.5, (30, 2)))
    nu = DiscreteMeasure(rng.uniform(-0.5, 0.5, (20, 2)))
    f = sample_features(spec, 40, 0)
    F = factorized_kernel(f, mu, nu)
    D = DenseKernel(F.materialize())
    r1 = sinkhorn(F, mu.weights, nu.weights, epsilon=0.5)
    r2 = sinkhorn(D, mu.weights, nu.weights, epsilon=0.5)
    assert r1.w_hat == pytest.approx(r2.w_hat, rel=1e-12)
    assert r1.iters == r2.iters


def test_stabilization_keeps_potentials_finite():
    eps = 0.02
    rng = np.random.default_rng(3)
    X = rng.uniform(0, 1, (20, 1))
    Y = rng.uniform(0, 1, (25, 1)) * 0.3
    C = cost_matrix(DiscreteMeasure(X), DiscreteMeasure(Y), CostSpec())
    K = gibbs_kernel(C, eps)
    cfg = SolveConfig(marginal_tol=1e-10, max_iters=100_000, stabilization_threshold=1e10)
    rep = sinkhorn(K, np.full(20, 0.05), np.full(25, 0.04), cfg, epsilon=eps)
    ref = sinkhorn(K, np.full(20, 0.05), np.full(25, 0.04),
                   SolveConfig(marginal_tol=1e-10, max_iters=100_000), epsilon=eps)
    assert rep.stabilizations > 0
    assert rep.w_hat == pytest.approx(ref.w_hat, abs=1e-9)


def test_input_errors():
    K = DenseKernel(np.ones((2, 2)))
    with pytest.raises(LengthMismatch):
        sinkhorn(K, [1.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        sinkhorn(K, [0.6, 0.6], [0.5, 0.5])
    with pytest.warns(RuntimeWarning):
        Kz = gibbs_kernel(np.array([[0.0, 1e5], [1e5, 0.0]]), 1.0)
    with pytest.raises(KernelUnderflow):
        sinkhorn(Kz, [0.5, 0.5], [0.5, 0.5])


def test_not_converged_warns():
    rng = np.random.default_rng(4)
    K = DenseKernel(rng.uniform(0.01, 1.0, (6, 6)))
    with pytest.warns(NotConverged):
        rep = sinkhorn(K, np.full(6, 1 / 6), np.full(6, 1 / 6),
                       SolveConfig(marginal_tol=1e-15, max_iters=3, check_every=1))
    assert not rep.converged and rep.iters == 3


def test_plan_cap():
    spec = FeatureMapSpec.gaussian(0.5, 1.0, 2)
    mu = DiscreteMeasure(np.zeros((3, 2)))
    F = factorized_kernel(sample_features(spec, 4, 0), mu, mu)
    rep = sinkhorn(F, mu.weights, mu.weights)
    assert plan(F, rep.potentials).shape == (3, 3)
    with pytest.raises(PlanTooLarge):
        plan(F, rep.potentials, cap=8)


def test_report_serialization(tmp_path):
    rep = sinkhorn(gibbs_kernel(C_2X3, 0.5), [0.3, 0.7], [0.2, 0.5, 0.3], epsilon=0.5)
    d = rep.to_dict(include_potentials=True)
    assert set(d) >= {"w_hat", "iters", "marginal_residual", "converged", "alpha", "beta"}
    path = tmp_path / "pot.npz"
    rep.dump_potentials(path)
    with np.load(path) as z:
        np.testing.assert_allclose(z["alpha"], d["alpha"])


def test_divergence_of_identical_measures():
    rng = np.random.default_rng(5)
    mu = DiscreteMeasure.normalized(rng.uniform(-0.5, 0.5, (15, 2)), rng.uniform(0.5, 1, 15))

    def builder(p, q):
        return gibbs_kernel(cost_matrix(p, q, CostSpec("squared_euclidean", 0.5)), 0.5)

    cfg = SolveConfig(marginal_tol=1e-10)
    assert abs(sinkhorn_divergence(mu, mu, builder, cfg, 0.5)) <= 2e-10


def test_divergence_names_failing_pair():
    mu = DiscreteMeasure([[0.0]])
    nu = DiscreteMeasure([[100.0]])

    def builder(p, q):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return gibbs_kernel(cost_matrix(p, q, CostSpec()), 1.0)

    with pytest.raises(DivergenceSolveError) as info:
        sinkhorn_divergence(mu, nu, builder)
    assert info.value.which == "xy"
    assert isinstance(info.value.original, KernelUnderflow)


def test_potential_range_check():
    rep = sinkhorn(DenseKernel([[0.4]]), [1.0], [1.0])
    chk = potential_range_check(rep.potentials, (0.4, 0.4), [1.0], [1.0], 1.0)
    assert chk.range_alpha == 0.0 and not chk.violated
    rep = sinkhorn(DenseKernel(np.full((3, 3), 0.5)), np.full(3, 1 / 3), np.full(3, 1 / 3))
    chk = potential_range_check(rep.potentials, (0.5, 0.5), np.full(3, 1 / 3), np.full(3, 1 / 3), 1.0)
    assert chk.range_alpha == pytest.approx(0.0, abs=1e-14)
    assert chk.range_beta == pytest.approx(0.0, abs=1e-14)


def test_range_bound_holds_on_random_instances():
    rng = np.random.default_rng(6)
    for _ in range(10):
        K = DenseKernel(rng.uniform(0.05, 1.0, (6, 8)))
        a = rng.uniform(0.5, 1, 6)
        b = rng.uniform(0.5, 1, 8)
        a, b = a / a.sum(), b / b.sum()
        rep = sinkhorn(K, a, b, TIGHT, epsilon=0.3)
        assert not potential_range_check(rep.potentials, K.extremes(), a, b, 0.3).violated
