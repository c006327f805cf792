"""Entropic optimal transport with positive random features in linear time."""

from .core import (
    CostSpec,
    DenseKernel,
    DiscreteMeasure,
    DualPotentials,
    FactorizedKernel,
    KernelOperator,
    cost_from_features,
    cost_matrix,
    gibbs_kernel,
    kernel_matvec,
    kernel_rmatvec,
    squared_distances,
)
from .errors import *  # noqa: F401,F403
from .features import (
    ConcentrationConstants,
    FeatureMapSpec,
    SampledFeatures,
    concentration_constants,
    embed,
    factorized_kernel,
    feature_budget,
    lambert_w0,
    ratio_error,
    sample_features,
)
from .grad import GradReport, grad_wrt_features, grad_wrt_kernel, grad_wrt_locations
from .solver import (
    SolveConfig,
    SolveReport,
    accelerated_sinkhorn,
    evaluate_dual,
    plan,
    potential_range_check,
    sinkhorn,
    sinkhorn_divergence,
)

__version__ = "0.1.0"
