"""Cox proportional hazards engine.

Log partial likelihood, score and observed information are built from the
risk-set aggregates

    S0(t) = (1/n) sum_j Y_j(t) exp(V_j' theta)
    S1(t) = (1/n) sum_j Y_j(t) exp(V_j' theta) V_j
    S2(t) = (1/n) sum_j Y_j(t) exp(V_j' theta) V_j V_j'

with ``Y_j(t) = 1{T_j >= t}``. Tied event times share one denominator
(Breslow) and subjects censored at an event time stay in its risk set.
"""
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .calibration import DistortionCalibrator, checked_mean
from .exceptions import (
    MaxIterations,
    NonFiniteLikelihood,
    SeparationDetected,
    SingularInformation,
)
from .normal import normal_quantile, two_sided_p

SCORE_TOL = 1e-9
LOGLIK_TOL = 1e-12
MAX_ITER = 100
MAX_HALVINGS = 30
MAX_ABS_THETA = 50.0
# curvature at the optimum relative to the curvature at theta = 0
FLATNESS_TOL = 1e-8
# log-likelihood decreases smaller than this (relative) are rounding noise
ASCENT_SLACK = 1e-13
COND_LIMIT = 1e14


class CoxData:
    """Right-censored survival data with a fixed covariate matrix.

    Sorting and tie structure are computed once so repeated likelihood
    evaluations cost one cumulative sum each.
    """

    def __init__(self, times, events, covariates):
        times = np.asarray(times, dtype=float).ravel()
        events = np.asarray(events).ravel()
        cov = np.asarray(covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        n = times.size
        if n == 0:
            raise ValueError("no subjects")
        if events.size != n or cov.shape[0] != n:
            raise ValueError("times, events and covariates have inconsistent lengths")
        if not np.all(np.isin(events, (0, 1))):
            raise ValueError("events must be coded 0/1")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(cov))):
            raise ValueError("times and covariates must be finite")
        if np.any(times < 0):
            raise ValueError("times must be nonnegative")
        events = events.astype(bool)
        if not events.any():
            raise ValueError("at least one event is required")

        self.times = times
        self.events = events
        self.covariates = cov
        self.n = n

        # descending time; stable so permutation of tied rows only reorders sums
        order = np.argsort(-times, kind="stable")
        self._order = order
        ts = times[order]
        # last position (in sorted order) whose time equals ts[k]: the full tied risk set
        self._group_end = np.searchsorted(-ts, -ts, side="right") - 1
        self._ev_sorted = events[order]
        # centring leaves every partial-likelihood quantity unchanged
        self._center = cov.mean(axis=0)
        self._v_sorted = cov[order] - self._center

    @property
    def n_params(self):
        return self.covariates.shape[1]

    @property
    def n_events(self):
        return int(self.events.sum())


@dataclass
class RiskSetAggregates:
    s0: float
    s1: np.ndarray
    s2: np.ndarray

    @property
    def mean(self):
        return self.s1 / self.s0

    @property
    def variance(self):
        e = self.mean
        return self.s2 / self.s0 - np.outer(e, e)


def risk_set_aggregates(theta, data, t):
    """``S0, S1, S2`` at time ``t`` (uncentred covariates, scaled by 1/n)."""
    theta = np.asarray(theta, dtype=float)
    at_risk = data.times >= t
    v = data.covariates[at_risk]
    w = np.exp(v @ theta)
    return RiskSetAggregates(
        s0=float(w.sum() / data.n),
        s1=(w[:, None] * v).sum(axis=0) / data.n,
        s2=np.einsum("i,ij,ik->jk", w, v, v) / data.n,
    )


def _evaluate(theta, data, order=2):
    """Return ``(loglik, score, information)`` up to the requested derivative order."""
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != data.n_params:
        raise ValueError(f"theta has {theta.size} entries, data has {data.n_params} covariates")
    v = data._v_sorted
    eta = v @ theta
    if not np.all(np.isfinite(eta)):
        raise NonFiniteLikelihood("linear predictor is not finite")
    shift = eta.max()
    w = np.exp(eta - shift)
    ends = data._group_end
    ev = data._ev_sorted

    s0 = np.cumsum(w)[ends][ev]
    if not np.all(s0 > 0):
        return _evaluate_rescaled(eta, data, order)
    log_s0 = np.log(s0) + shift
    loglik = float(eta[ev].sum() - log_s0.sum())
    if not np.isfinite(loglik):
        raise NonFiniteLikelihood(f"log partial likelihood is not finite at theta={theta}")
    if order == 0:
        return loglik, None, None

    wv = w[:, None] * v
    s1 = np.cumsum(wv, axis=0)[ends][ev]
    e = s1 / s0[:, None]
    grad = v[ev].sum(axis=0) - e.sum(axis=0)
    if order == 1:
        return loglik, grad, None

    s2 = np.cumsum(wv[:, :, None] * v[:, None, :], axis=0)[ends][ev]
    info = (s2 / s0[:, None, None]).sum(axis=0) - e.T @ e
    info = 0.5 * (info + info.T)
    return loglik, grad, info


def _evaluate_rescaled(eta, data, order):
    # Fallback when exp(eta - max) underflows for an entire risk set: sweep
    # backwards in time with a running maximum.
    v = data._v_sorted
    n, d = v.shape
    ends = data._group_end
    ev = data._ev_sorted
    m = -np.inf
    s0 = 0.0
    s1 = np.zeros(d)
    s2 = np.zeros((d, d))
    cum = []
    for k in range(n):
        if eta[k] > m:
            scale = np.exp(m - eta[k]) if np.isfinite(m) else 0.0
            s0, s1, s2 = s0 * scale, s1 * scale, s2 * scale
            m = eta[k]
        wk = np.exp(eta[k] - m)
        s0 += wk
        s1 = s1 + wk * v[k]
        s2 = s2 + wk * np.outer(v[k], v[k])
        cum.append((m, s0, s1.copy(), s2.copy()))
    loglik = 0.0
    grad = v[ev].sum(axis=0)
    info = np.zeros((d, d))
    for k in np.flatnonzero(ev):
        mk, a0, a1, a2 = cum[ends[k]]
        loglik += eta[k] - (np.log(a0) + mk)
        e = a1 / a0
        grad = grad - e
        info += a2 / a0 - np.outer(e, e)
    if not np.isfinite(loglik):
        raise NonFiniteLikelihood("log partial likelihood is not finite")
    if order == 0:
        return float(loglik), None, None
    return float(loglik), grad, (0.5 * (info + info.T) if order == 2 else None)


def log_partial_likelihood(theta, data):
    """``sum over events of V_i' theta - log sum_{T_j >= T_i} exp(V_j' theta)``."""
    return _evaluate(theta, data, order=0)[0]


def score(theta, data):
    """Gradient of the log partial likelihood: ``sum over events of V_i - E(theta, T_i)``."""
    return _evaluate(theta, data, order=1)[1]


def information(theta, data):
    """Observed information ``sum over events of V(theta, T_i)`` (minus the Hessian)."""
    return _evaluate(theta, data, order=2)[2]


@dataclass
class CoxFit:
    theta_hat: np.ndarray
    loglik: float
    information: np.ndarray
    iterations: int
    converged: bool
    max_score_norm: float
    n: int = 0
    n_events: int = 0


def _min_eig(a):
    return float(np.linalg.eigvalsh(a)[0]) if a.size else 0.0


def fit(data, score_tol=SCORE_TOL, loglik_tol=LOGLIK_TOL, max_iter=MAX_ITER,
        max_halvings=MAX_HALVINGS, max_abs_theta=MAX_ABS_THETA):
    """Maximise the log partial likelihood by damped Newton-Raphson from zero.

    Converged when ``max|score| < score_tol * n`` and the last step changed
    the log likelihood by less than ``loglik_tol * max(1, |loglik|)``.
    """
    d = data.n_params
    theta = np.zeros(d)
    ll, grad, info = _evaluate(theta, data)
    curvature0 = float(np.trace(info))
    if not curvature0 > 0:
        raise SingularInformation("covariates carry no within-risk-set variation")
    delta_ll = np.inf

    for it in range(max_iter + 1):
        gnorm = float(np.max(np.abs(grad)))
        if gnorm < score_tol * data.n and delta_ll < loglik_tol * max(1.0, abs(ll)):
            if _min_eig(info) < FLATNESS_TOL * curvature0:
                raise SeparationDetected(
                    "partial likelihood is flat at the optimum (monotone likelihood); "
                    "the covariates separate events from survivors"
                )
            return CoxFit(theta, ll, info, it, True, gnorm, data.n, data.n_events)
        if it == max_iter:
            break
        if np.linalg.cond(info) > COND_LIMIT:
            if it == 0:
                raise SingularInformation("information is singular at theta = 0 (collinear covariates?)")
            raise SeparationDetected("information degenerates along the Newton path (monotone likelihood)")
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError as exc:
            raise SingularInformation(f"Newton system is singular at iteration {it}") from exc
        if not np.all(np.isfinite(step)):
            raise SingularInformation(f"Newton step is not finite at iteration {it}")

        t = 1.0
        for _ in range(max_halvings + 1):
            cand = theta + t * step
            if np.max(np.abs(cand)) > max_abs_theta:
                raise SeparationDetected(
                    f"coefficients diverge (|theta| > {max_abs_theta:g}); "
                    "likely monotone likelihood"
                )
            ll_new, grad_new, info_new = _evaluate(cand, data)
            if ll_new >= ll - ASCENT_SLACK * max(1.0, abs(ll)):
                break
            t *= 0.5
        else:
            # no ascent possible: only acceptable if we are already at the optimum
            if gnorm < score_tol * data.n:
                delta_ll = 0.0
                continue
            raise MaxIterations(f"step halving failed to increase the likelihood at iteration {it}")
        delta_ll = abs(ll_new - ll)
        theta, ll, grad, info = cand, ll_new, grad_new, info_new

    raise MaxIterations(f"Newton-Raphson did not converge in {max_iter} iterations")


@dataclass
class VarianceEstimate:
    sigma_hat: np.ndarray
    omega_hat: np.ndarray
    covariance: np.ndarray
    std_errors: np.ndarray = field(init=False)

    def __post_init__(self):
        self.std_errors = np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def _inverse(a):
    try:
        inv = np.linalg.inv(a)
    except np.linalg.LinAlgError as exc:
        raise SingularInformation("information matrix is singular") from exc
    if not np.all(np.isfinite(inv)):
        raise SingularInformation("information matrix is singular")
    return 0.5 * (inv + inv.T)


def model_variance(fit_result, n=None):
    """Standard Cox covariance ``Sigma_hat^{-1} / n``, i.e. the inverse information."""
    n = fit_result.n if n is None else n
    sigma = fit_result.information / n
    d = sigma.shape[0]
    return VarianceEstimate(sigma, np.zeros((d, d)), _inverse(sigma) / n)


def sandwich_variance(fit_result, xtilde, x_hat, n=None):
    """Plug-in covariance ``Sigma^{-1} (Sigma + Omega) Sigma^{-1} / n`` for calibrated fits.

    The calibrated covariate is the last coefficient. ``Omega`` is
    ``max(var(xtilde) - var(x_hat), 0) / mean(xtilde)^2 * zeta zeta'`` with
    ``zeta = -gamma_hat * Sigma[:, -1]``; the mean of the distorted covariate
    estimates ``E(X)`` because the distortion has mean one.
    """
    if not fit_result.converged:
        raise ValueError("variance requested for a fit that did not converge")
    n = fit_result.n if n is None else n
    if n < 2:
        raise ValueError("need n >= 2")
    xtilde = np.asarray(xtilde, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    mean = checked_mean(xtilde)
    excess = max(float(xtilde.var(ddof=1) - x_hat.var(ddof=1)), 0.0)

    sigma = fit_result.information / n
    gamma = fit_result.theta_hat[-1]
    zeta = -gamma * sigma[:, -1]
    omega = excess / mean**2 * np.outer(zeta, zeta)
    sigma_inv = _inverse(sigma)
    # expanded as Sigma^{-1} + Sigma^{-1} Omega Sigma^{-1} so Omega = 0 gives the model covariance bit for bit
    extra = sigma_inv @ omega @ sigma_inv
    cov = (sigma_inv + 0.5 * (extra + extra.T)) / n
    return VarianceEstimate(sigma, omega, cov)


def coefficient_table(names, estimates, std_errors, ci_level=0.95):
    """Rows of ``name, estimate, se, z, p_value, ci_lower, ci_upper`` (Wald)."""
    zcrit = normal_quantile(0.5 + ci_level / 2.0)
    rows = []
    for name, est, se in zip(names, estimates, std_errors):
        est, se = float(est), float(se)
        z = est / se if se > 0 else np.nan
        rows.append({
            "name": name,
            "estimate": est,
            "se": se,
            "z": z,
            "p_value": two_sided_p(z) if np.isfinite(z) else np.nan,
            "ci_lower": est - zcrit * se,
            "ci_upper": est + zcrit * se,
        })
    return rows


# -- estimators --------------------------------------------------------------

def check_survival_target(y, n=None):
    """Accept ``y`` as an (n, 2) array of ``[time, event]`` or a structured array."""
    if isinstance(y, np.ndarray) and y.dtype.names:
        names = y.dtype.names
        time_key = next((k for k in names if "time" in k.lower()), names[1])
        event_key = next((k for k in names if k != time_key), names[0])
        times, events = y[time_key], y[event_key]
    else:
        y = np.asarray(y, dtype=float)
        if y.ndim != 2 or y.shape[1] != 2:
            raise ValueError("y must have columns [time, event]")
        times, events = y[:, 0], y[:, 1]
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    if n is not None and times.size != n:
        raise ValueError(f"y has {times.size} rows, X has {n}")
    return times, events.astype(int)


class _CoxBase(BaseEstimator):
    def _fit_cox(self, V, times, events):
        data = CoxData(times, events, V)
        self.fit_ = fit(data, max_iter=self.max_iter)
        self.coef_ = self.fit_.theta_hat
        self.log_likelihood_ = self.fit_.loglik
        self.n_iter_ = self.fit_.iterations
        return data

    def confidence_intervals(self, ci_level=None):
        check_is_fitted(self, "coef_")
        level = self.ci_level if ci_level is None else ci_level
        z = normal_quantile(0.5 + level / 2.0)
        se = self.standard_errors_
        return np.column_stack([self.coef_ - z * se, self.coef_ + z * se])

    def summary(self, names=None):
        check_is_fitted(self, "coef_")
        if names is None:
            names = [f"x{k}" for k in range(self.coef_.size)]
        return coefficient_table(names, self.coef_, self.standard_errors_, self.ci_level)


class CoxPH(_CoxBase):
    """Cox proportional hazards regression (Breslow ties, Newton-Raphson).

    ``fit(X, y)`` takes ``y`` with columns ``[time, event]``. Standard errors
    are model based (inverse observed information).
    """

    def __init__(self, ci_level=0.95, max_iter=MAX_ITER):
        self.ci_level = ci_level
        self.max_iter = max_iter

    def fit(self, X, y):
        X = check_array(X)
        times, events = check_survival_target(y, X.shape[0])
        self._fit_cox(X, times, events)
        self.n_features_in_ = X.shape[1]
        self.variance_ = model_variance(self.fit_)
        self.covariance_ = self.variance_.covariance
        self.standard_errors_ = self.variance_.std_errors
        return self

    def predict(self, X):
        """Log partial hazard ``X @ coef_``."""
        check_is_fitted(self, "coef_")
        return check_array(X) @ self.coef_

    def score(self, X, y):
        """Log partial likelihood per subject at the fitted coefficients."""
        check_is_fitted(self, "coef_")
        X = check_array(X)
        times, events = check_survival_target(y, X.shape[0])
        return log_partial_likelihood(self.coef_, CoxData(times, events, X)) / X.shape[0]


class DistortedCovariateCoxPH(_CoxBase):
    """Cox regression with one covariate observed as ``phi(U) * X``.

    ``X`` holds the accurately measured covariates followed by two columns:
    the distorted covariate and the confounder ``U``. ``y`` has columns
    ``[time, event]``.

    With ``method="proposed"`` the distortion is estimated by kernel
    smoothing, the covariate is calibrated and standard errors use the
    sandwich covariance that accounts for the calibration step.
    ``method="naive"`` fits the distorted covariate as is.

    Parameters
    ----------
    method : {"proposed", "naive"}, default="proposed"
    bandwidth : float or "cv", default="cv"
    ci_level : float, default=0.95
    phi_floor : float, default=1e-6
    max_iter : int, default=100
    """

    def __init__(self, method="proposed", bandwidth="cv", ci_level=0.95,
                 phi_floor=1e-6, max_iter=MAX_ITER):
        self.method = method
        self.bandwidth = bandwidth
        self.ci_level = ci_level
        self.phi_floor = phi_floor
        self.max_iter = max_iter

    def _design(self, X, fitting):
        X = check_array(X, ensure_min_features=2)
        z, xt, u = X[:, :-2], X[:, -2], X[:, -1]
        if self.method == "naive":
            xcol = xt
        elif self.method == "proposed":
            if fitting:
                self.calibrator_ = DistortionCalibrator(self.bandwidth, self.phi_floor)
                self.calibrator_.fit(np.column_stack([u, xt]))
                xcol = self.calibrator_.result_.x_hat
            else:
                xcol = self.calibrator_.transform(np.column_stack([u, xt]))[:, 0]
        else:
            raise ValueError(f"unknown method {self.method!r}")
        return np.column_stack([z, xcol]), xt, xcol

    def fit(self, X, y):
        V, xt, xcol = self._design(X, fitting=True)
        times, events = check_survival_target(y, V.shape[0])
        self._fit_cox(V, times, events)
        self.n_features_in_ = V.shape[1] + 1
        if self.method == "proposed":
            self.bandwidth_ = self.calibrator_.bandwidth_
            self.calibrated_ = xcol
            self.variance_ = sandwich_variance(self.fit_, xt, xcol)
        else:
            self.variance_ = model_variance(self.fit_)
        self.covariance_ = self.variance_.covariance
        self.standard_errors_ = self.variance_.std_errors
        return self

    def predict(self, X):
        """Log partial hazard using the (calibrated) covariate."""
        check_is_fitted(self, "coef_")
        V, _, _ = self._design(X, fitting=False)
        return V @ self.coef_
