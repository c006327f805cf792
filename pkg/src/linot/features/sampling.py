"""Sampling feature parameters and embedding point clouds.

Parameters are drawn from a counter-based stream: the standard normal used
for coordinate ``c`` of feature ``j`` is number ``j * d + c`` of a Box-Muller
sequence built on Philox keyed by the seed. Feature ``j`` is therefore the
same whatever the batch size, and a prefix of a longer draw matches a shorter
draw with the same seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch, PointOutsideDomain
from .maps import FeatureMapSpec, feature_values

_MASK64 = (1 << 64) - 1
_RAW_PER_ADVANCE = 4  # Philox.advance(1) skips four 64-bit outputs
_EMBED_CHUNK = 4096


def _raw_block(seed, start, count):
    """``count`` raw 64-bit outputs of the seeded stream, starting at ``start``."""
    bitgen = np.random.Philox(key=int(seed) & _MASK64)
    blocks, skip = divmod(start, _RAW_PER_ADVANCE)
    if blocks:
        bitgen.advance(blocks)
    raw = bitgen.random_raw(skip + count)
    return np.asarray(raw[skip:], dtype=np.uint64)


def standard_normals(seed, start, count):
    """Normals ``start .. start + count - 1`` of the seeded Box-Muller sequence.

    Normal ``2k`` is the cosine and ``2k + 1`` the sine branch of pair ``k``,
    which consumes raw outputs ``2k`` and ``2k + 1``.
    """
    if count <= 0:
        return np.empty(0)
    first_pair = start // 2
    last_pair = (start + count - 1) // 2
    raw = _raw_block(seed, 2 * first_pair, 2 * (last_pair - first_pair + 1))
    u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
    u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    pairs = np.empty(2 * rad.size)
    pairs[0::2] = rad * np.cos(ang)
    pairs[1::2] = rad * np.sin(ang)
    off = start - 2 * first_pair
    return pairs[off : off + count]


def _draw_theta(spec, r, seed, offset=0):
    du = spec.param_dim
    z = standard_normals(seed, offset * du, r * du).reshape(r, du)
    if spec.kind == "custom":
        if spec.custom.transform is not None:
            return np.asarray(spec.custom.transform(z), dtype=np.float64)
        return z
    return spec.sampling_std * z


@dataclass(frozen=True, eq=False)
class SampledFeatures:
    """A feature map ``phi_theta(x) = r^{-1/2} (phi(x, u_1), ..., phi(x, u_r))``.

    Attributes
    ----------
    spec : FeatureMapSpec
    theta : ndarray, shape (r, d_u)
        One sampled parameter per row.
    seed : int or None
        ``None`` when ``theta`` was supplied directly.
    """

    spec: FeatureMapSpec
    theta: np.ndarray
    seed: int = None

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64, order="C", ndmin=2)
        if theta.shape[0] < 1:
            raise ValueError("need at least one feature")
        if theta.shape[1] != self.spec.param_dim:
            raise ValueError(
                f"theta has {theta.shape[1]} columns, map expects {self.spec.param_dim}"
            )
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def r(self):
        return self.theta.shape[0]

    @property
    def p(self):
        return self.spec.p

    @property
    def width(self):
        """Length ``p * r`` of an embedded point."""
        return self.p * self.r

    def with_theta(self, theta):
        return SampledFeatures(self.spec, theta, None)

    def kernel(self, X, Y):
        """Approximate kernel ``k_theta(x_i, y_j)`` as a dense matrix."""
        return embed_points(self, X) @ embed_points(self, Y).T

    # -- persistence ---------------------------------------------------------

    def to_dict(self):
        out = self.spec.to_dict()
        out["r"] = self.r
        out["seed"] = self.seed
        return out

    def save_theta(self, path):
        """Write ``theta`` as flat little-endian float64, one sample per row."""
        self.theta.astype("<f8").tofile(path)

    @classmethod
    def load_theta(cls, spec, path):
        flat = np.fromfile(path, dtype="<f8")
        return cls(spec, flat.reshape(-1, spec.param_dim), None)


def sample_features(spec, r, seed):
    """Draw ``r`` parameters i.i.d. from the map's sampling law.

    Deterministic in ``(spec, seed)``; feature ``j`` does not depend on ``r``.
    """
    if int(r) != r or r < 1:
        raise ValueError("r must be a positive integer")
    return SampledFeatures(spec, _draw_theta(spec, int(r), seed), int(seed))


def sample_feature_block(spec, start, stop, seed):
    """Parameters ``start .. stop - 1`` of the stream ``sample_features`` draws from."""
    return _draw_theta(spec, stop - start, seed, offset=start)


def features_from_json(text):
    """Inverse of ``json.dumps(features.to_dict())``: resample from spec and seed."""
    data = json.loads(text) if isinstance(text, str) else dict(text)
    return sample_features(FeatureMapSpec.from_dict(data), int(data["r"]), int(data["seed"]))


def _points_of(measure_or_points):
    pts = getattr(measure_or_points, "points", measure_or_points)
    return np.atleast_2d(np.asarray(pts, dtype=np.float64))


def _check_domain(spec, X):
    if spec.kind != "gaussian":
        return
    norms = np.linalg.norm(X, axis=1)
    bad = norms > spec.radius * (1.0 + 1e-12)
    if np.any(bad):
        i = int(np.argmax(norms))
        raise PointOutsideDomain(
            f"point {i} has norm {norms[i]:.6g} > R = {spec.radius:.6g}"
        )


def embed_points(features, X):
    """Embedded points as rows: shape ``(n, p * r)``, row ``i`` is ``phi_theta(x_i)``."""
    X = _points_of(X)
    if X.shape[1] != features.spec.dim:
        raise DimensionMismatch(f"points have dim {X.shape[1]}, map expects {features.spec.dim}")
    _check_domain(features.spec, X)
    out = np.empty((X.shape[0], features.width))
    scale = 1.0 / np.sqrt(features.r)
    for start in range(0, X.shape[0], _EMBED_CHUNK):
        block = feature_values(features.spec, X[start : start + _EMBED_CHUNK], features.theta, scale)
        out[start : start + block.shape[0]] = block.reshape(block.shape[0], -1)
    return out


def embed(features, measure):
    """Feature matrix ``xi`` of shape ``(p * r, n)``; column ``i`` is ``phi_theta(x_i)``.

    Entry ``k * p + s`` of a column is slot ``s`` of feature ``k``. The result
    is a transposed view of a row-major ``(n, p * r)`` array, so each point's
    features are contiguous.

    Raises
    ------
    PointOutsideDomain
        For the gaussian map when a point lies outside ``B(0, R)``.
    """
    return embed_points(features, measure).T


def factorized_kernel(features, mu, nu):
    """``FactorizedKernel`` for the pair of measures under ``features``."""
    from ..core import FactorizedKernel

    return FactorizedKernel(embed(features, mu), embed(features, nu))
