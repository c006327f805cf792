"""
Moving a point cloud along the OT gradient
==========================================

Gradients of the regularized value with respect to support locations come
from the converged potentials only. The raw value is not minimal when the
clouds coincide, so we descend the debiased divergence
``W(mu, nu) - (W(mu, mu) + W(nu, nu)) / 2`` instead.
"""

import numpy as np

from linot.core import DiscreteMeasure
from linot.features import FeatureMapSpec, factorized_kernel, sample_features
from linot.grad import TIGHT, grad_wrt_locations
from linot.solver import sinkhorn, sinkhorn_divergence

eps = 0.5
rng = np.random.default_rng(0)
target = DiscreteMeasure(rng.normal([0.4, 0.3], 0.05, size=(30, 2)))
X = rng.normal([-0.4, -0.3], 0.05, size=(30, 2))
features = sample_features(FeatureMapSpec.gaussian(eps, 1.0, 2), 500, seed=1)

###############################################################################
# Each step solves two problems: against the target, and against itself.


def solve(p, q):
    return sinkhorn(factorized_kernel(features, p, q), p.weights, q.weights, TIGHT, epsilon=eps)


def builder(p, q):
    return factorized_kernel(features, p, q)


for step in range(61):
    mu = DiscreteMeasure(X)
    gx, _ = grad_wrt_locations(features, mu, target, solve(mu, target))
    sx, sy = grad_wrt_locations(features, mu, mu, solve(mu, mu))
    grad = gx.grad - 0.5 * (sx.grad + sy.grad)
    if step % 15 == 0:
        div = sinkhorn_divergence(mu, target, builder, TIGHT, epsilon=eps)
        gap = np.linalg.norm(X.mean(0) - target.points.mean(0))
        print(f"step {step:2d}  divergence {div:.6f}  mean gap {gap:.4f}")
    X = X - 0.5 * grad / mu.weights[:, None]
