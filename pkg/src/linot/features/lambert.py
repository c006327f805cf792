"""Principal branch of the Lambert W function."""

import numpy as np

from ..errors import OutOfDomain

_BRANCH_POINT = -np.exp(-1.0)


def _initial_guess(x):
    w = np.log1p(np.maximum(x, 0.0))
    neg = x < 0
    if np.any(neg):
        # series about the branch point -1/e
        p = np.sqrt(np.maximum(2.0 * (np.e * x[neg] + 1.0), 0.0))
        w[neg] = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3
    return w


def lambert_w0(x, tol=1e-12, max_iter=50):
    """Principal real branch ``W0``: the ``w >= -1`` solving ``w * exp(w) = x``.

    Halley iteration, vectorized over array input. Scalars in, scalar out.

    Raises
    ------
    OutOfDomain
        If any ``x < -1/e``.
    """
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if np.any(np.isnan(x)) or np.any(x < _BRANCH_POINT):
        raise OutOfDomain("lambert_w0 is defined for x >= -1/e")
    w = _initial_guess(x)
    at_branch = x == _BRANCH_POINT
    active = ~at_branch & (x != 0)
    w[x == 0] = 0.0
    w[at_branch] = -1.0
    for _ in range(max_iter):
        if not np.any(active):
            break
        wa = w[active]
        ew = np.exp(wa)
        f = wa * ew - x[active]
        wp1 = wa + 1.0
        denom = ew * wp1 - (wa + 2.0) * f / (2.0 * wp1)
        step = np.where(denom != 0, f / denom, 0.0)
        w[active] = np.maximum(wa - step, -1.0)
        done = np.abs(step) <= tol * (1.0 + np.abs(wa))
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return float(w[0]) if scalar else w
