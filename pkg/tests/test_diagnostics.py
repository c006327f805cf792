import math

import numpy as np
import pytest

from linot.errors import InvalidProbability, UnsupportedSpec
from linot.features import (
    ConcentrationConstants,
    CustomMap,
    FeatureMapSpec,
    arccos_gradient_moment,
    concentration_constants,
    feature_budget,
    finite_set_bound,
    gaussian_ratio_sup,
    q_theta,
    q_theta_bound,
    ratio_error,
    ratio_vs_difference,
    sample_features,
    uniform_bound,
)

GAUSS = FeatureMapSpec.gaussian(0.5, 1.0, 2)


def test_gaussian_constants():
    c = concentration_constants(GAUSS)
    assert c.psi == pytest.approx(3.526445668703793, rel=1e-14)
    assert c.V == pytest.approx(62.64104022642056, rel=1e-14)
    assert c.D == pytest.approx(math.sqrt(2.0), rel=1e-15)
    assert concentration_constants(FeatureMapSpec.gaussian(1.0, 1.0, 1)).kappa_lb == \
        pytest.approx(math.exp(-4.0), rel=1e-15)


def test_gaussian_psi_formula_at_q_one():
    # q = 1 when W0(z) = z / 2, i.e. z = 2 log 2
    z = 2.0 * math.log(2.0)
    spec = FeatureMapSpec.gaussian(1.0, math.sqrt(z), 1)
    assert spec.q == pytest.approx(1.0, rel=1e-12)
    assert concentration_constants(spec).psi == pytest.approx(2.0**1.5, rel=1e-12)


def test_gaussian_ratio_sup_exceeds_advertised_psi():
    # the advertised psi is not a bound on the per-feature ratio
    assert gaussian_ratio_sup(GAUSS) == pytest.approx(62881.66932823873, rel=1e-12)
    assert gaussian_ratio_sup(GAUSS) > concentration_constants(GAUSS).psi
    x = np.array([[1.0, 0.0]])
    u = 2 * x / (2 - 1 / GAUSS.q)
    f = sample_features(GAUSS, 1, 0).with_theta(u)
    ratio = f.kernel(x, x)[0, 0]
    assert ratio == pytest.approx(gaussian_ratio_sup(GAUSS), rel=1e-10)


def test_arccos_constants():
    spec = FeatureMapSpec.arccos(1, 0.1, 2.0, 2)
    c = concentration_constants(spec)
    assert c.u_truncation == 16.0
    assert c.kappa_lb == 0.1
    assert c.V == pytest.approx(2.0, rel=1e-14)
    # random triples lower-bound the supremum
    rng = np.random.default_rng(1)
    from linot.features.diagnostics import _pairwise_ratio

    def ball(n, radius):
        z = rng.normal(size=(n, 2))
        return z / np.linalg.norm(z, axis=1, keepdims=True) * radius * np.sqrt(rng.uniform(size=(n, 1)))

    emp = _pairwise_ratio(spec, ball(100_000, 1.0), ball(100_000, 1.0), rng.normal(size=(100_000, 2)) * 2)
    assert np.isfinite(c.psi) and c.psi >= emp.max()


def test_arccos_gradient_moment_matches_monte_carlo():
    spec = FeatureMapSpec.arccos(2, 0.1, 2.0, 3)
    from linot.features import jacobian_x

    x = np.array([[1.0, 0.0, 0.0]])
    U = sample_features(spec, 400_000, 0).theta
    g = jacobian_x(spec, x, U)[0, :, 0, :]
    mc = np.mean(np.sum(g * g, axis=1))
    assert mc == pytest.approx(arccos_gradient_moment(spec), rel=0.03)
    with pytest.raises(UnsupportedSpec):
        concentration_constants(FeatureMapSpec.arccos(0, 0.1, 2.0, 2))


def test_custom_constants():
    consts = ConcentrationConstants(2.0, 0.5, 1.0, 1.0)
    cm = CustomMap(phi=lambda X, U: np.ones((len(X), len(U), 1)), constants=consts)
    assert concentration_constants(FeatureMapSpec("custom", 1.0, 1.0, 1, custom=cm)) is consts
    with pytest.raises(UnsupportedSpec):
        concentration_constants(FeatureMapSpec("custom", 1.0, 1.0, 1, custom=CustomMap(phi=None)))
    with pytest.raises(ValueError):
        ConcentrationConstants(float("inf"), 1.0, 1.0, 1.0)


def test_budget_scaling_in_delta():
    c = concentration_constants(GAUSS)
    r1 = feature_budget(0.1, 0.05, c, 2, 0.5, 4.0, 40_000)
    r2 = feature_budget(0.2, 0.05, c, 2, 0.5, 4.0, 40_000)
    assert r1 / r2 == pytest.approx(4.0, rel=1e-3)


def test_budget_finite_branch_when_d_large():
    c = ConcentrationConstants(2.0, 0.1, 10.0, 2.0)
    r = feature_budget(0.1, 0.05, c, 50, 0.5, 4.0, 100)
    assert r == math.ceil(2.0 * 4.0 / 0.01 * math.log(100 / 0.05))


def test_budget_plug_in_value():
    # d=2, eps=0.5, R=1, C_inf=(2R)^2, delta=0.1, tau=0.05, n=4e4
    c = concentration_constants(GAUSS)
    assert feature_budget(0.1, 0.05, c, 2, 0.5, 4.0, 40_000) == 33807
    assert feature_budget(0.1, 0.05, c, 2, 0.5, 4.0, 40_000, const=1.0) == 16904


def test_budget_monotone_and_errors():
    c = concentration_constants(GAUSS)
    base = feature_budget(0.1, 0.05, c, 2, 0.5, 4.0, 100)
    assert feature_budget(0.1, 0.1, c, 2, 0.5, 4.0, 100) <= base
    assert feature_budget(0.11, 0.05, c, 2, 0.5, 4.0, 100) <= base
    for d_, t_ in [(0.0, 0.5), (1.0, 0.5), (0.1, 0.0), (0.1, 1.5)]:
        with pytest.raises(InvalidProbability):
            feature_budget(d_, t_, c, 2, 0.5, 4.0, 100)


def test_bounds():
    assert finite_set_bound(0, 0.1, 2.0, 10) == 200.0
    assert finite_set_bound(800, 0.1, 2.0, 10, 20) == pytest.approx(800 * math.exp(-1.0))
    c = concentration_constants(GAUSS)
    assert uniform_bound(10**6, 0.1, c, 2) < uniform_bound(10**5, 0.1, c, 2)


def test_ratio_error_single_point():
    f = sample_features(GAUSS, 50, 0)
    x = np.array([[0.2, -0.1]])
    res = ratio_error(f, x, x)
    assert res.argmax == (0, 0)
    assert res.max_ratio_dev == pytest.approx(abs(f.kernel(x, x)[0, 0] - 1.0), rel=1e-14)


def test_ratio_error_small_at_large_r():
    g = np.linspace(-0.6, 0.6, 20)
    X = np.column_stack([g, g[::-1] * 0.5])
    devs = [ratio_error(sample_features(GAUSS, 100_000, s), X, X).max_ratio_dev for s in range(3)]
    assert max(devs) < 0.05


def test_q_theta():
    assert q_theta(math.exp(-3.0)) == pytest.approx(3.0)
    assert q_theta_bound(4.0, 0.5, 0.1) == pytest.approx(32.0 + math.log(2.2))
    with pytest.raises(ValueError):
        q_theta(0.0)


def test_ratio_vs_difference():
    f = sample_features(GAUSS, 20, 0)
    X = np.array([[0.0, 0.0], [0.9, 0.0], [-0.9, 0.0]])
    psi_hat, phi_hat, factor = ratio_vs_difference(f, X, X)
    assert psi_hat > 0 and phi_hat >= psi_hat
    assert factor == pytest.approx((phi_hat / psi_hat) ** 2)
