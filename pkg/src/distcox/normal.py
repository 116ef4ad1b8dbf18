"""Standard normal CDF and quantile with fixed, documented constants.

The quantile is Acklam's rational approximation (relative error below
1.15e-9 over (0, 1)). It uses only arithmetic, ``log`` and ``sqrt``, so the
simulation draws built on it do not depend on a particular ``erf``
implementation.
"""
import math

import numpy as np

_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _poly(coefs, x):
    out = np.zeros_like(x)
    for c in coefs:
        out = out * x + c
    return out


def normal_quantile(p):
    """Inverse standard normal CDF; ``p`` must lie strictly inside (0, 1)."""
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0) & (p < 1))):
        raise ValueError("probabilities must lie strictly between 0 and 1")
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    out = np.empty_like(p)

    lo = p < _P_LOW
    hi = p > 1 - _P_LOW
    mid = ~(lo | hi)

    if lo.any():
        q = np.sqrt(-2 * np.log(p[lo]))
        out[lo] = _poly(_C, q) / (_poly(_D, q) * q + 1)
    if hi.any():
        q = np.sqrt(-2 * np.log1p(-p[hi]))
        out[hi] = -_poly(_C, q) / (_poly(_D, q) * q + 1)
    if mid.any():
        q = p[mid] - 0.5
        r = q * q
        out[mid] = _poly(_A, r) * q / (_poly(_B, r) * r + 1)
    return float(out[0]) if scalar else out


def normal_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def two_sided_p(z):
    """``2 (1 - Phi(|z|))``, computed in the upper tail to avoid cancellation."""
    return math.erfc(abs(z) / math.sqrt(2.0))
