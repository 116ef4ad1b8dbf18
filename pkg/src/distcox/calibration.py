"""Kernel estimate of a multiplicative distortion and covariate calibration.

The observed covariate is ``x_tilde = phi(u) * x`` with ``E[phi(U)] = 1``
and ``U`` independent of ``x``. Then ``phi(u) = E[x_tilde | U=u] / E[x_tilde]``,
so a Nadaraya-Watson fit of ``x_tilde`` on ``u`` divided by the sample mean
recovers ``phi`` and ``x_hat = x_tilde / phi_hat(u)`` recovers ``x``.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import MeanNearZero, PhiNearZero
from .kernels import check_bandwidth, nw_regress, select_bandwidth

PHI_FLOOR = 1e-6
MEAN_REL_FLOOR = 1e-8


@dataclass
class CalibrationResult:
    psi_hat: np.ndarray
    phi_hat: np.ndarray
    bandwidth: float
    xtilde_mean: float
    x_hat: Optional[np.ndarray] = None


def _check_pair(u_values, xtilde):
    u = np.asarray(u_values, dtype=float).ravel()
    xt = np.asarray(xtilde, dtype=float).ravel()
    if u.shape != xt.shape:
        raise ValueError(f"confounder and covariate lengths differ ({u.size} vs {xt.size})")
    if u.size < 2:
        raise ValueError("need at least two subjects to calibrate")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(xt))):
        raise ValueError("confounder and covariate must be finite")
    return u, xt


def checked_mean(xtilde):
    """Sample mean of the distorted covariate, refusing values indistinguishable from 0."""
    xt = np.asarray(xtilde, dtype=float)
    mean = float(xt.mean())
    sd = float(xt.std(ddof=1)) if xt.size > 1 else 0.0
    if mean == 0.0 or abs(mean) < MEAN_REL_FLOOR * sd:
        raise MeanNearZero(
            f"mean of distorted covariate ({mean:.3g}) is indistinguishable from zero; "
            "the distortion is not identifiable"
        )
    return mean


def estimate_phi(u_values, xtilde, h):
    """Estimate ``psi(U_i) = E[x_tilde | U_i]`` and ``phi(U_i)`` at the observed confounders."""
    h = check_bandwidth(h)
    u, xt = _check_pair(u_values, xtilde)
    mean = checked_mean(xt)
    psi = nw_regress(u, u, xt, h)
    return CalibrationResult(psi_hat=psi, phi_hat=psi / mean, bandwidth=h, xtilde_mean=mean)


def calibrate(u_values, xtilde, h, phi_floor=PHI_FLOOR):
    """Estimate ``phi`` and return calibrated covariates ``x_tilde / phi_hat(U_i)``."""
    res = estimate_phi(u_values, xtilde, h)
    xt = np.asarray(xtilde, dtype=float).ravel()
    small = np.flatnonzero(np.abs(res.phi_hat) < phi_floor)
    if small.size:
        i = int(small[0])
        raise PhiNearZero(i, float(res.phi_hat[i]))
    res.x_hat = xt / res.phi_hat
    return res


class DistortionCalibrator(TransformerMixin, BaseEstimator):
    """Undo a multiplicative confounder distortion of one covariate.

    Input is a two-column array ``[confounder, distorted]``. ``transform``
    returns the calibrated covariate as a single column. New rows are
    calibrated with the kernel fit learned from the training rows.

    Parameters
    ----------
    bandwidth : float or "cv", default="cv"
        Smoothing bandwidth for the confounder, or ``"cv"`` for the
        cross-validated choice over the default grid.
    phi_floor : float, default=1e-6
        Minimum admissible ``|phi_hat|``.
    """

    def __init__(self, bandwidth="cv", phi_floor=PHI_FLOOR):
        self.bandwidth = bandwidth
        self.phi_floor = phi_floor

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        if X.shape[1] != 2:
            raise ValueError("expected columns [confounder, distorted covariate]")
        u, xt = X[:, 0], X[:, 1]
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "cv":
                raise ValueError(f"unknown bandwidth rule {self.bandwidth!r}")
            h = select_bandwidth(u)
        else:
            h = self.bandwidth
        self.result_ = calibrate(u, xt, h, phi_floor=self.phi_floor)
        self.bandwidth_ = self.result_.bandwidth
        self.xtilde_mean_ = self.result_.xtilde_mean
        self.confounder_ = u.copy()
        self.distorted_ = xt.copy()
        self.n_features_in_ = 2
        return self

    def phi(self, u):
        """Estimated distortion at arbitrary confounder values."""
        check_is_fitted(self, "result_")
        return nw_regress(u, self.confounder_, self.distorted_, self.bandwidth_) / self.xtilde_mean_

    def transform(self, X):
        check_is_fitted(self, "result_")
        X = check_array(X)
        phi = np.atleast_1d(self.phi(X[:, 0]))
        small = np.flatnonzero(np.abs(phi) < self.phi_floor)
        if small.size:
            raise PhiNearZero(int(small[0]), float(phi[small[0]]))
        return (X[:, 1] / phi)[:, None]
