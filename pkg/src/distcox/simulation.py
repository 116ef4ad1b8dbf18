"""Monte Carlo study of naive, calibrated and oracle Cox estimators.

Data follow ``lambda(t | Z, X) = exp(beta' Z + gamma X)`` with AR(1)
correlated normal ``Z``, normal ``X``, uniform confounder ``U`` and
``X_tilde = phi(U) X``. Censoring is ``min(Unif(0, tau + 2), tau)`` with
``tau`` tuned to a target censoring rate.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .calibration import calibrate
from .cox import CoxData, fit, model_variance, sandwich_variance
from .dataset import Dataset
from .exceptions import BracketFailure, DistCoxError, TooManyFailures
from .kernels import select_bandwidth
from .normal import normal_quantile
from .rng import PILOT_STREAM, Stream

log = logging.getLogger(__name__)

METHODS = ("proposed", "naive", "oracle")
PILOT_SIZE = 50_000
TAU_BRACKET = (1e-4, 1e4)
CR_TOL = 0.005


@dataclass(frozen=True)
class DistortionSpec:
    """Mean-one distortion ``phi`` for a uniform confounder on ``[lo, hi]``.

    kind:
      ``identity``      phi = 1
      ``linear_shift``  phi = (u + shift) / E(U + shift)
      ``quadratic``     phi = (u + shift)^2 / E(U + shift)^2
      ``custom``        piecewise linear through ``table`` knots, flat outside;
                        must already have mean one.
    """
    kind: str = "linear_shift"
    shift: float = 3.0
    table: tuple = ()

    def normaliser(self, lo, hi):
        a = self.shift
        if self.kind == "linear_shift":
            return (lo + hi) / 2.0 + a
        if self.kind == "quadratic":
            return ((hi + a) ** 3 - (lo + a) ** 3) / (3.0 * (hi - lo))
        return 1.0

    def __call__(self, u, lo, hi):
        u = np.asarray(u, dtype=float)
        if self.kind == "identity":
            return np.ones_like(u)
        if self.kind == "linear_shift":
            return (u + self.shift) / self.normaliser(lo, hi)
        if self.kind == "quadratic":
            return (u + self.shift) ** 2 / self.normaliser(lo, hi)
        if self.kind == "custom":
            knots = np.asarray(self.table, dtype=float)
            return np.interp(u, knots[:, 0], knots[:, 1])
        raise ValueError(f"unknown distortion kind {self.kind!r}")

    def mean(self, lo, hi):
        """Exact ``E[phi(U)]`` for ``U ~ Unif[lo, hi]``."""
        if self.kind in ("identity", "linear_shift", "quadratic"):
            return 1.0
        knots = np.asarray(self.table, dtype=float)
        inner = knots[(knots[:, 0] > lo) & (knots[:, 0] < hi), 0]
        xs = np.concatenate([[lo], inner, [hi]])
        ys = self(xs, lo, hi)
        return float(np.sum((ys[1:] + ys[:-1]) * np.diff(xs)) / 2.0 / (hi - lo))

    def validate(self, lo, hi):
        if self.kind not in ("identity", "linear_shift", "quadratic", "custom"):
            raise ValueError(f"unknown distortion kind {self.kind!r}")
        if self.kind == "custom":
            knots = np.asarray(self.table, dtype=float)
            if knots.ndim != 2 or knots.shape[0] < 2 or knots.shape[1] != 2:
                raise ValueError("custom distortion needs at least two (u, phi) knots")
            if np.any(np.diff(knots[:, 0]) <= 0):
                raise ValueError("custom distortion knots must be strictly increasing in u")
            m = self.mean(lo, hi)
            if abs(m - 1.0) > 1e-10:
                raise ValueError(f"custom distortion has mean {m!r} over [{lo}, {hi}], expected 1")
        elif self.kind != "identity" and self.normaliser(lo, hi) == 0:
            raise ValueError("distortion normaliser is zero")
        phi = self(np.linspace(lo, hi, 1001), lo, hi)
        if np.any(phi <= 0):
            raise ValueError("distortion must be positive on the confounder support")

    @property
    def label(self):
        if self.kind == "identity":
            return "identity"
        if self.kind == "custom":
            return "custom"
        return f"{self.kind}:{self.shift:g}"


@dataclass
class SimulationConfig:
    n: int = 100
    beta0: Sequence[float] = (1.0, 0.5)
    gamma0: float = 1.5
    z_corr: float = 0.8
    x_mean: float = 1.0
    x_sd: float = 0.5
    u_lo: float = 2.0
    u_hi: float = 6.0
    distortion: DistortionSpec = field(default_factory=DistortionSpec)
    target_cr: float = 0.2
    replications: int = 1000
    seed: int = 2020
    ci_level: float = 0.95
    bandwidth: Union[str, float] = "cv"
    tau: Optional[float] = None
    max_failure_rate: float = 0.05
    config_id: str = "study"

    def __post_init__(self):
        self.beta0 = tuple(float(b) for b in self.beta0)

    @property
    def p(self):
        return len(self.beta0)

    @property
    def truth(self):
        return np.array([*self.beta0, self.gamma0])

    @property
    def parameter_names(self):
        return [f"beta{k + 1}" for k in range(self.p)] + ["gamma"]

    def validate(self):
        if self.n < 10:
            raise ValueError("n must be at least 10")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if not 0 < self.target_cr < 1:
            raise ValueError("target_cr must lie in (0, 1)")
        if not 0 < self.ci_level < 1:
            raise ValueError("ci_level must lie in (0, 1)")
        if not -1 < self.z_corr < 1:
            raise ValueError("z_corr must lie in (-1, 1)")
        if self.x_sd < 0 or not self.u_lo < self.u_hi:
            raise ValueError("invalid covariate distribution")
        if self.p < 1:
            raise ValueError("at least one accurately measured covariate is required")
        if self.tau is not None and not self.tau > 0:
            raise ValueError("tau must be positive")
        if not isinstance(self.bandwidth, str):
            if not (math.isfinite(self.bandwidth) and self.bandwidth > 0):
                raise ValueError("fixed bandwidth must be positive")
        elif self.bandwidth != "cv":
            raise ValueError(f"unknown bandwidth policy {self.bandwidth!r}")
        self.distortion.validate(self.u_lo, self.u_hi)


def _draw_subjects(config, stream, n):
    # per-subject block of uniforms: p for Z, then X, U, event time, censoring
    p = config.p
    block = stream.uniforms(n * (p + 4)).reshape(n, p + 4)
    eps = normal_quantile(block[:, :p])
    rho = config.z_corr
    z = np.empty((n, p))
    z[:, 0] = eps[:, 0]
    scale = math.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        # Cholesky factor of the AR(1) correlation (rho^|j-k|), applied row by row
        z[:, j] = rho * z[:, j - 1] + scale * eps[:, j]
    x = config.x_mean + config.x_sd * normal_quantile(block[:, p])
    u = config.u_lo + (config.u_hi - config.u_lo) * block[:, p + 1]
    e = -np.log1p(-block[:, p + 2])
    t = e / np.exp(z @ np.asarray(config.beta0) + config.gamma0 * x)
    return z, x, u, t, block[:, p + 3]


def _censor(t, v, tau):
    c = np.minimum(v * (tau + 2.0), tau)
    return np.minimum(t, c), (t <= c).astype(int)


def generate_dataset(config, tau, stream):
    """One simulated sample of size ``config.n``, retaining the true covariate."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    z, x, u, t, v = _draw_subjects(config, stream, config.n)
    time, event = _censor(t, v, tau)
    xtilde = config.distortion(u, config.u_lo, config.u_hi) * x
    return Dataset(time=time, event=event, z=z, u=u, xtilde=xtilde, x=x)


def censoring_rate(config, tau, stream, size):
    _, _, _, t, v = _draw_subjects(config, stream, size)
    return float(np.mean(t > np.minimum(v * (tau + 2.0), tau)))


@dataclass
class TauCalibration:
    tau: float
    pilot_cr: float
    trace: list


def calibrate_tau(config, pilot_size=PILOT_SIZE, tol=CR_TOL, bracket=TAU_BRACKET, return_trace=False):
    """Bisect (on log scale) for the study length giving ``config.target_cr``.

    Uses one fixed pilot sample from the reserved stream, so the estimated
    censoring rate is exactly nonincreasing in ``tau``.
    """
    target = config.target_cr
    if not 0 < target < 1:
        raise ValueError("target_cr must lie in (0, 1)")
    _, _, _, t, v = _draw_subjects(config, Stream(config.seed, PILOT_STREAM), pilot_size)

    def cr(tau):
        return float(np.mean(t > np.minimum(v * (tau + 2.0), tau)))

    lo, hi = bracket
    cr_lo, cr_hi = cr(lo), cr(hi)
    trace = [(lo, cr_lo), (hi, cr_hi)]
    if not cr_hi - tol < target < cr_lo + tol:
        raise BracketFailure(
            f"censoring rate {target} not attainable for tau in [{lo:g}, {hi:g}] "
            f"(rates {cr_hi:.4f}..{cr_lo:.4f})"
        )
    result = None
    for tau, rate in ((lo, cr_lo), (hi, cr_hi)):
        if abs(rate - target) < tol:
            result = (tau, rate)
    for _ in range(200):
        if result is not None:
            break
        mid = math.sqrt(lo * hi)
        rate = cr(mid)
        trace.append((mid, rate))
        if abs(rate - target) < tol:
            result = (mid, rate)
        elif rate > target:
            lo = mid
        else:
            hi = mid
    if result is None:
        raise BracketFailure("bisection did not reach the censoring-rate tolerance")
    cal = TauCalibration(result[0], result[1], trace)
    return cal if return_trace else cal.tau


@dataclass
class ReplicationResult:
    estimates: np.ndarray  # (method, parameter)
    std_errors: np.ndarray
    censoring_rate: float
    bandwidth: float


def fit_replication(data, config):
    """Fit proposed, naive and oracle estimators to one dataset."""
    h = select_bandwidth(data.u) if config.bandwidth == "cv" else float(config.bandwidth)
    cal = calibrate(data.u, data.xtilde, h)
    est, ses = [], []
    for method in METHODS:
        col = {"proposed": cal.x_hat, "naive": data.xtilde, "oracle": data.x}[method]
        res = fit(CoxData(data.time, data.event, np.column_stack([data.z, col])))
        if method == "proposed":
            var = sandwich_variance(res, data.xtilde, cal.x_hat)
        else:
            var = model_variance(res)
        est.append(res.theta_hat)
        ses.append(var.std_errors)
    return ReplicationResult(np.array(est), np.array(ses), float(1 - data.event.mean()), h)


def _replicate(args):
    config, tau, r = args
    data = generate_dataset(config, tau, Stream(config.seed, r))
    try:
        return fit_replication(data, config)
    except DistCoxError as exc:
        log.debug("replication %d failed: %s", r, exc)
        return None


@dataclass
class SummaryRow:
    method: str
    parameter: str
    bias: float
    sd: float
    se: float
    mse: float
    cp: float


@dataclass
class SimulationSummary:
    config: SimulationConfig
    tau_used: float
    achieved_cr: float
    replications: int
    replication_failures: int
    rows: list
    estimates: np.ndarray = field(repr=False, default=None)
    std_errors: np.ndarray = field(repr=False, default=None)

    def get(self, method, parameter):
        for row in self.rows:
            if row.method == method and row.parameter == parameter:
                return row
        raise KeyError((method, parameter))


def summarize(estimates, std_errors, truth, ci_level, names):
    """Bias, SD, SE, MSE and Wald coverage per method and parameter.

    ``estimates`` and ``std_errors`` have shape (replication, method, parameter).
    SD is the sample standard deviation (undefined, NaN, for one replication).
    """
    m = estimates.shape[0]
    z = normal_quantile(0.5 + ci_level / 2.0)
    err = estimates - truth
    bias = err.mean(axis=0)
    sd = estimates.std(axis=0, ddof=1) if m > 1 else np.full(bias.shape, np.nan)
    se = std_errors.mean(axis=0)
    mse = (err**2).mean(axis=0)
    cp = (np.abs(err) <= z * std_errors).mean(axis=0)
    rows = []
    for i, method in enumerate(METHODS):
        for k, name in enumerate(names):
            rows.append(SummaryRow(method, name, float(bias[i, k]), float(sd[i, k]),
                                   float(se[i, k]), float(mse[i, k]), float(cp[i, k])))
    return rows


def run_study(config, threads=1, tau=None):
    """Run all replications and aggregate per method and parameter.

    Replication ``r`` uses stream ``(seed, r)``; results are reduced in
    replication order, so output does not depend on ``threads``. A
    replication where any estimator fails is dropped for all three.
    """
    config.validate()
    if tau is None:
        tau = config.tau if config.tau is not None else calibrate_tau(config)
    jobs = [(config, tau, r) for r in range(config.replications)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_replicate, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    else:
        results = [_replicate(job) for job in jobs]

    ok = [r for r in results if r is not None]
    failures = len(results) - len(ok)
    if failures > config.max_failure_rate * config.replications:
        raise TooManyFailures(f"{failures} of {config.replications} replications failed")
    if not ok:
        raise TooManyFailures("every replication failed")
    est = np.stack([r.estimates for r in ok])
    ses = np.stack([r.std_errors for r in ok])
    rows = summarize(est, ses, config.truth, config.ci_level, config.parameter_names)
    achieved = float(np.mean([r.censoring_rate for r in results if r is not None]))
    return SimulationSummary(config, float(tau), achieved, len(ok), failures, rows, est, ses)
