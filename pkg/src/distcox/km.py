"""Kaplan-Meier product-limit estimator."""
from dataclasses import dataclass

import numpy as np

from .exceptions import EmptySample


@dataclass
class KMCurve:
    """Product-limit curve; one entry per distinct event time.

    ``survival[k]`` is the value on ``[times[k], times[k+1])``. Before the
    first event time the curve equals 1.
    """
    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    n_events: np.ndarray
    n: int

    def __call__(self, t):
        """Evaluate the right-continuous step function at ``t``."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        padded = np.concatenate([[1.0], self.survival])
        out = padded[idx + 1]
        return float(out) if out.ndim == 0 else out


def km_estimate(times, events):
    """Kaplan-Meier estimate; censorings tied with events count as still at risk."""
    times = np.asarray(times, dtype=float).ravel()
    events = np.asarray(events).ravel()
    if times.size == 0:
        raise EmptySample("no observations")
    if events.size != times.size:
        raise ValueError("times and events have different lengths")
    if np.any(times < 0) or not np.all(np.isfinite(times)):
        raise ValueError("times must be finite and nonnegative")
    if not np.all(np.isin(events, (0, 1))):
        raise ValueError("events must be coded 0/1")
    events = events.astype(bool)

    event_times, d = np.unique(times[events], return_counts=True)
    at_risk = times.size - np.searchsorted(np.sort(times), event_times, side="left")
    # (r - d) / r rather than 1 - d / r: one rounding per factor
    survival = np.cumprod((at_risk - d) / at_risk)
    return KMCurve(event_times, survival, at_risk.astype(int), d.astype(int), int(times.size))
