"""Gaussian kernel smoothing primitives.

Nadaraya-Watson regression, kernel density estimation (full and
leave-one-out) and least-squares cross-validation bandwidth selection.
Everything here is a pure function of its inputs.
"""
import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DegenerateWeight, EmptySample, IndexOutOfRange

SQRT_2PI = math.sqrt(2.0 * math.pi)
SQRT_4PI = math.sqrt(4.0 * math.pi)
K0 = 1.0 / SQRT_2PI

#: NW denominators below this are treated as extrapolation far outside the data.
WEIGHT_FLOOR = 1e-300


def gaussian_kernel(t):
    """Standard normal density ``exp(-t**2 / 2) / sqrt(2 pi)``; scalar or array."""
    t = np.asarray(t, dtype=float)
    out = np.exp(-0.5 * t * t) / SQRT_2PI
    return float(out) if out.ndim == 0 else out


def check_bandwidth(h):
    h = float(h)
    if not (math.isfinite(h) and h > 0):
        raise ValueError(f"bandwidth must be positive and finite, got {h!r}")
    return h


def check_grid(grid):
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("bandwidth grid is empty")
    if not np.all(np.isfinite(grid)) or np.any(grid <= 0):
        raise ValueError("bandwidth grid must contain positive finite values")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("bandwidth grid must be strictly increasing")
    return grid


def _as_points(points, min_size=1):
    points = np.asarray(points, dtype=float).ravel()
    if points.size < min_size:
        raise EmptySample(f"need at least {min_size} point(s), got {points.size}")
    if not np.all(np.isfinite(points)):
        raise ValueError("sample contains non-finite values")
    return points


def nw_regress(u, points, responses, h):
    """Nadaraya-Watson estimate of ``E[response | point = u]``.

    ``u`` may be a scalar or an array of evaluation points. Results are
    clipped to ``[min(responses), max(responses)]`` so rounding can never
    push a convex combination outside the hull.
    """
    h = check_bandwidth(h)
    points = _as_points(points)
    responses = np.asarray(responses, dtype=float).ravel()
    if responses.shape != points.shape:
        raise ValueError("points and responses must have the same length")
    u_arr = np.asarray(u, dtype=float)
    scalar = u_arr.ndim == 0
    u_arr = np.atleast_1d(u_arr).ravel()

    weights = gaussian_kernel((u_arr[:, None] - points[None, :]) / h)
    weights = np.atleast_2d(weights)
    denom = weights.sum(axis=1)
    bad = np.flatnonzero(~(denom > WEIGHT_FLOOR))
    if bad.size:
        raise DegenerateWeight(
            f"kernel weights vanish at u={u_arr[bad[0]]!r} (bandwidth {h}); "
            "evaluation point lies far outside the data"
        )
    est = (weights @ responses) / denom
    est = np.clip(est, responses.min(), responses.max())
    return float(est[0]) if scalar else est


def kde(u, points, h):
    """Kernel density estimate ``(1/(n h)) sum K((u - U_i)/h)``."""
    h = check_bandwidth(h)
    points = _as_points(points)
    u_arr = np.asarray(u, dtype=float)
    scalar = u_arr.ndim == 0
    u_arr = np.atleast_1d(u_arr).ravel()
    dens = gaussian_kernel((u_arr[:, None] - points[None, :]) / h)
    dens = np.atleast_2d(dens).sum(axis=1) / (points.size * h)
    return float(dens[0]) if scalar else dens


def kde_loo(i, points, h):
    """Leave-one-out density at ``U_i``.

    Normalised by ``n h`` (not ``(n - 1) h``) so that
    ``kde(U_i) - kde_loo(i) == K(0) / (n h)``.
    """
    h = check_bandwidth(h)
    points = _as_points(points, min_size=2)
    n = points.size
    if not 0 <= i < n:
        raise IndexOutOfRange(f"index {i} outside [0, {n})")
    others = np.delete(points, i)
    return float(gaussian_kernel((points[i] - others) / h).sum() / (n * h))


def _pair_sq_diffs(points):
    """Squared differences over unordered pairs ``i < j`` (condensed, length n(n-1)/2)."""
    n = points.size
    if n < 2:
        return np.empty(0)
    return np.concatenate([(points[i + 1:] - points[i]) ** 2 for i in range(n - 1)])


def _cv_from_pairs(h, pair_sq, n):
    # K*K is the N(0, 2) density, so int phat^2 is a double sum of exp(-d^2 / 4h^2);
    # the leave-one-out term needs exp(-d^2 / 2h^2), the square of the same factor.
    a = np.exp(-pair_sq / (4.0 * h * h))
    int_sq = (n + 2.0 * a.sum()) / (n * n * h * SQRT_4PI)
    loo_total = 2.0 * (a * a).sum() / SQRT_2PI / (n * h)
    return float(int_sq - 2.0 * loo_total / n)


def cv_score(h, points):
    """Least-squares cross-validation criterion for the density of ``points``.

    ``CV(h) = int phat(u)^2 du - (2/n) sum_i phat_(-i)(U_i)`` with the first
    term in closed form.
    """
    h = check_bandwidth(h)
    points = _as_points(points, min_size=2)
    return _cv_from_pairs(h, _pair_sq_diffs(points), points.size)


def integrated_squared_density(points, h):
    """Closed form of ``int phat(u)^2 du``."""
    h = check_bandwidth(h)
    points = _as_points(points)
    n = points.size
    pair_sq = _pair_sq_diffs(points)
    return float((n + 2.0 * np.exp(-pair_sq / (4.0 * h * h)).sum()) / (n * n * h * SQRT_4PI))


def silverman_bandwidth(points):
    points = _as_points(points, min_size=2)
    sd = points.std(ddof=1)
    if not sd > 0:
        raise EmptySample("all points are identical; no scale for a bandwidth grid")
    return 1.06 * sd * points.size ** (-0.2)


def default_bandwidth_grid(points, size=40):
    """``size`` log-spaced bandwidths on ``[h_S/10, 10 h_S]`` around Silverman's rule."""
    h_s = silverman_bandwidth(points)
    return np.geomspace(h_s / 10.0, h_s * 10.0, size)


def cv_curve(points, grid=None):
    """Return ``(grid, scores)`` with the CV criterion at each bandwidth."""
    points = _as_points(points, min_size=2)
    grid = default_bandwidth_grid(points) if grid is None else check_grid(grid)
    pair_sq = _pair_sq_diffs(points)
    scores = np.array([_cv_from_pairs(h, pair_sq, points.size) for h in grid])
    return grid, scores


def select_bandwidth(points, grid=None):
    """Grid minimiser of :func:`cv_score`; ties go to the smallest bandwidth."""
    grid, scores = cv_curve(points, grid)
    return float(grid[int(np.argmin(scores))])


class NadarayaWatson(RegressorMixin, BaseEstimator):
    """Univariate Nadaraya-Watson regressor with a Gaussian kernel.

    Parameters
    ----------
    bandwidth : float or "cv", default="cv"
        Fixed bandwidth, or ``"cv"`` to pick one by density cross-validation
        of the training inputs over :func:`default_bandwidth_grid`.
    """

    def __init__(self, bandwidth="cv"):
        self.bandwidth = bandwidth

    def fit(self, X, y):
        x = _column(X)
        y = np.asarray(y, dtype=float).ravel()
        if x.shape != y.shape:
            raise ValueError("X and y have inconsistent lengths")
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "cv":
                raise ValueError(f"unknown bandwidth rule {self.bandwidth!r}")
            self.bandwidth_ = select_bandwidth(x)
        else:
            self.bandwidth_ = check_bandwidth(self.bandwidth)
        self.points_ = x
        self.responses_ = y
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "points_")
        return np.atleast_1d(nw_regress(_column(X), self.points_, self.responses_, self.bandwidth_))


def _column(X):
    x = np.asarray(X, dtype=float)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise ValueError(f"expected a single column, got shape {x.shape}")
        x = x[:, 0]
    return x.ravel()
