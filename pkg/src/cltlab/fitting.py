"""Least-squares power-law fits on log-log axes."""

from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class LogLogFit:
    slope: float
    stderr: float
    intercept: float
    residuals: np.ndarray

    @property
    def constant(self):
        return float(np.exp(self.intercept))

    def predict(self, x):
        return self.constant * np.asarray(x, dtype=float) ** self.slope


def loglog_fit(x, y):
    """Fit ``log y = intercept + slope * log x`` by ordinary least squares.

    Both ``x`` and ``y`` must be positive; ``stderr`` is the usual standard
    error of the slope (0 for an exact two-point fit).
    """
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    if lx.size < 2:
        raise ValueError("need at least two points")
    res = stats.linregress(lx, ly)
    resid = ly - (res.intercept + res.slope * lx)
    stderr = float(res.stderr) if lx.size > 2 else 0.0
    return LogLogFit(float(res.slope), stderr, float(res.intercept), resid)
