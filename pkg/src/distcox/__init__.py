"""Cox regression for a covariate observed under an unknown multiplicative distortion."""
from .calibration import CalibrationResult, DistortionCalibrator, calibrate, estimate_phi
from .cox import (
    CoxData,
    CoxFit,
    CoxPH,
    DistortedCovariateCoxPH,
    VarianceEstimate,
    fit,
    information,
    log_partial_likelihood,
    model_variance,
    sandwich_variance,
    score,
)
from .kernels import (
    NadarayaWatson,
    cv_score,
    gaussian_kernel,
    kde,
    kde_loo,
    nw_regress,
    select_bandwidth,
)
from .km import KMCurve, km_estimate
from .simulation import DistortionSpec, SimulationConfig, SimulationSummary, run_study

__version__ = "0.1.0"

__all__ = [
    "CalibrationResult", "CoxData", "CoxFit", "CoxPH", "DistortedCovariateCoxPH",
    "DistortionCalibrator", "DistortionSpec", "KMCurve", "NadarayaWatson",
    "SimulationConfig", "SimulationSummary", "VarianceEstimate", "calibrate",
    "cv_score", "estimate_phi", "fit", "gaussian_kernel", "information", "kde",
    "kde_loo", "km_estimate", "log_partial_likelihood", "model_variance",
    "nw_regress", "run_study", "sandwich_variance", "score", "select_bandwidth",
]
