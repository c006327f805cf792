"""Positive feature maps, sampling, and concentration diagnostics."""

from .diagnostics import (
    ConcentrationConstants,
    RatioError,
    arccos_gradient_moment,
    arccos_ratio_sup,
    concentration_constants,
    feature_budget,
    finite_set_bound,
    gaussian_ratio_sup,
    q_theta,
    q_theta_bound,
    ratio_error,
    ratio_vs_difference,
    uniform_bound,
)
from .lambert import lambert_w0
from .maps import (
    CustomMap,
    FeatureMapSpec,
    arccos_J,
    arccos_feature,
    arccos_kernel,
    exact_kernel,
    feature_values,
    gaussian_feature,
    gaussian_kernel,
    jacobian_u,
    jacobian_x,
)
from .sampling import (
    SampledFeatures,
    embed,
    embed_points,
    factorized_kernel,
    features_from_json,
    sample_feature_block,
    sample_features,
    standard_normals,
)
