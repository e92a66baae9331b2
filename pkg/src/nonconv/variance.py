"""Limiting variances of the component sums.

Component ``i`` of the sum scales like ``sqrt(t)`` with a variance that
depends on how its argument indices move:

* ``i <= k`` (all arguments on linear maps ``u n``): consecutive summands
  ``Y_i(n), Y_i(n+l)`` keep their argument pairs at the fixed gaps ``u l``
  forever, so the limit is a lag series
  ``sigma_i^2 = a_i(0) + 2 sum_{l>=1} a_i(l)`` with
  ``a_i(l) = <F_i, (G_{1 l} x ... x G_{i l}) F_i>`` where ``G_{u l}`` is the
  stationary pair law of the chain at gap ``u l`` (coordinates decouple
  across ``u`` because their mutual gaps grow).
* ``i > k`` (last argument on a fast map): the last argument drifts away
  from everything, and ``F_i`` integrates to zero in it, so all lagged
  covariances vanish and ``sigma_i^2 = int F_i^2 dmu^i`` under the product
  measure.

Distinct components are asymptotically orthogonal for the same reason (the
higher component's last argument escapes), so the total limiting variance
is the plain sum over components.

All of this needs stationary pair laws and is therefore restricted to
finite-state models; observables on the continuous kinds go through their
symbolic quotient chain first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from nonconv.models import ProcessModel, pair_distribution
from nonconv.sums import Decomposition, QFamily

__all__ = [
    "VarianceResult",
    "covariance_sequence",
    "limiting_variance",
    "variance_profile",
    "total_variance",
]


def _pair_contract(table: np.ndarray, mats) -> float:
    """``<T, (G_1 x ... x G_i) T>`` = sum over two index tuples weighted by
    one pair-law matrix per coordinate."""
    h = table
    for u, g in enumerate(mats):
        h = np.moveaxis(np.tensordot(h, g, axes=([u], [0])), -1, u)
    return float(np.sum(h * table))


def covariance_sequence(model: ProcessModel, decomp: Decomposition, i: int,
                        qf: QFamily, lags) -> np.ndarray:
    """Limiting lagged covariances ``a_i(l)`` of component ``i`` for ``i <= k``.

    ``a_i(-l) = a_i(l)``; only nonnegative lags are accepted.
    """
    if not 1 <= i <= qf.k:
        raise ValueError("lag covariances apply to the all-linear components i <= k")
    table = decomp.component_table(i)
    out = np.empty(len(lags), dtype=np.float64)
    for j, l in enumerate(lags):
        if l < 0:
            raise ValueError("use symmetry for negative lags")
        mats = [pair_distribution(model, u * int(l)) for u in range(1, i + 1)]
        out[j] = _pair_contract(table, mats)
    return out


@dataclass(frozen=True)
class VarianceResult:
    value: float
    component: int
    route: str            # "lag_series" or "orthogonal"
    n_lags: int = 0
    tail_bound: float = 0.0


def limiting_variance(model: ProcessModel, decomp: Decomposition, i: int,
                      qf: QFamily, tol: float = 1e-10,
                      max_lag: int = 5000) -> VarianceResult:
    """``sigma_i^2`` by the route appropriate to the component (see module doc).

    The lag series is truncated once the geometric tail envelope
    ``|a(L)| r / (1 - r)`` (with ``r`` the model's spectral gap rate) drops
    below ``tol``.
    """
    if not 1 <= i <= decomp.ell:
        raise ValueError(f"component {i} outside 1..{decomp.ell}")
    table = decomp.component_table(i)
    if i > qf.k:
        w = decomp.marginal.weights
        sq = table ** 2
        for _ in range(i):
            sq = np.tensordot(sq, w, axes=([-1], [0]))
        return VarianceResult(float(sq), i, "orthogonal")

    rate = model.spectral_gap_rate()
    if not rate < 1.0:
        raise ValueError("lag series needs a spectral gap")
    acc = covariance_sequence(model, decomp, i, qf, [0])[0]
    l = 0
    tail = math.inf
    while l < max_lag:
        l += 1
        a_l = covariance_sequence(model, decomp, i, qf, [l])[0]
        acc += 2.0 * a_l
        tail = 2.0 * abs(a_l) * rate / max(1.0 - rate, 1e-12)
        if tail < tol and l >= 4:
            break
    else:
        raise RuntimeError(f"lag series did not settle within {max_lag} lags")
    return VarianceResult(float(acc), i, "lag_series", n_lags=l, tail_bound=tail)


def variance_profile(model: ProcessModel, decomp: Decomposition, qf: QFamily,
                     tol: float = 1e-10) -> tuple:
    """All component variances ``(sigma_1^2, ..., sigma_ell^2)``."""
    return tuple(limiting_variance(model, decomp, i, qf, tol=tol)
                 for i in range(1, decomp.ell + 1))


def total_variance(profile) -> float:
    """Variance of the full centred sum: components are asymptotically
    orthogonal, so this is just the sum."""
    return float(sum(r.value for r in profile))
