"""Small regression helpers shared by the diagnostic modules."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

__all__ = ["PowerFit", "loglog_fit", "GeometricFit", "geometric_fit", "power_geometric_tail"]


@dataclass(frozen=True)
class PowerFit:
    """OLS fit of ``log y = intercept + exponent * log x``."""

    exponent: float
    intercept: float
    exponent_se: float
    ci_low: float
    ci_high: float
    max_residual: float
    n_points: int

    @property
    def amplitude(self) -> float:
        return math.exp(self.intercept)


def loglog_fit(x, y, confidence: float = 0.95) -> PowerFit:
    """Fit a power law through positive data by log-log least squares.

    The confidence interval on the exponent is the usual OLS t-interval;
    with replicate-averaged envelopes the residuals are mildly correlated,
    so the interval is a desk-scale diagnostic rather than an exact one.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 3:
        raise ValueError("need at least three positive points for a power fit")
    lx, ly = np.log(x[keep]), np.log(y[keep])
    n = len(lx)
    res = stats.linregress(lx, ly)
    resid = ly - (res.intercept + res.slope * lx)
    tq = stats.t.ppf(0.5 + confidence / 2.0, n - 2)
    return PowerFit(
        exponent=float(res.slope),
        intercept=float(res.intercept),
        exponent_se=float(res.stderr),
        ci_low=float(res.slope - tq * res.stderr),
        ci_high=float(res.slope + tq * res.stderr),
        max_residual=float(np.max(np.abs(resid))),
        n_points=n,
    )


@dataclass(frozen=True)
class GeometricFit:
    """Fit ``v_n ~ c * r**n`` on positive terms."""

    c: float
    rate: float
    max_log_residual: float
    n_points: int

    @property
    def converged(self) -> bool:
        return 0.0 <= self.rate < 1.0


def geometric_fit(n, values) -> GeometricFit:
    """Log-linear fit of a (presumed) geometrically decaying sequence."""
    n = np.asarray(n, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    keep = v > 0
    if keep.sum() < 2:
        # degenerate: nothing to fit, treat as already vanished
        return GeometricFit(c=0.0, rate=0.0, max_log_residual=0.0, n_points=int(keep.sum()))
    ln = np.log(v[keep])
    slope, intercept = np.polyfit(n[keep], ln, 1)
    resid = ln - (intercept + slope * n[keep])
    return GeometricFit(
        c=float(math.exp(intercept)),
        rate=float(math.exp(slope)),
        max_log_residual=float(np.max(np.abs(resid))),
        n_points=int(keep.sum()),
    )


def power_geometric_tail(c: float, rate: float, delta: float, start: int) -> float:
    """Upper bound for ``sum_{n >= start} n**delta * c * rate**n``.

    Uses the ratio envelope ``t_{n+1}/t_n <= rate * (1 + 1/start)**delta``;
    valid (and finite) whenever that envelope is below one.
    """
    if c == 0.0 or rate == 0.0:
        return 0.0
    if not 0.0 < rate < 1.0:
        return math.inf
    start = max(start, 1)
    q = rate * (1.0 + 1.0 / start) ** delta
    if q >= 1.0:
        return math.inf
    t0 = c * start ** delta * rate ** start
    return t0 / (1.0 - q)
