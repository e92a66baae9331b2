"""Exact dependence coefficients between past and future windows.

For chain-driven models the dependence between the remote past and the
future separated by ``n`` steps is computed *exactly* from the joint law of
two finite state windows.  Four classical coefficients are exposed:

``alpha``
    strong mixing: the largest covariance deviation over event pairs (the
    cut norm of the centred joint matrix),
``rho``
    maximal correlation: the largest singular value of the normalised
    centred joint matrix,
``phi``
    uniform mixing: the worst total-variation distance between a conditional
    future law and the stationary future law,
``psi``
    ratio mixing: the worst relative deviation of the joint law from the
    product law on atoms.

For a Markov driving chain the coefficients over infinite past/future equal
the single-coordinate (``window=1``) values: conditioning collapses both
optimal events onto the boundary states.  Wider windows are supported so the
collapse can be verified by direct enumeration.

The operator norms behind these coefficients, for a conditional-expectation
operator between ``L^q`` of the future and ``L^p`` of the past, are related
to the named coefficients at the four corner pairs::

    (q, p) = (inf, 1)   -> 4 * alpha
    (q, p) = (2, 2)     -> rho
    (q, p) = (inf, inf) -> 2 * phi
    (q, p) = (1, inf)   -> psi

Intermediate pairs are bounded by Riesz-Thorin interpolation; see
:func:`interpolation_bounds`, which keeps explicit interpolation constants
so that every exact coefficient is dominated by its own bound.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from nonconv.fitting import geometric_fit, power_geometric_tail
from nonconv.models import MomentTable, ProcessModel, moment_table

__all__ = [
    "COEFFICIENT_KINDS",
    "coefficient",
    "varpi",
    "beta_coefficient",
    "interpolation_bounds",
    "MixingReport",
    "mixing_report",
    "beta_profile",
    "AssumptionParams",
    "ConditionCheck",
    "AssumptionCertificate",
    "verify_assumption",
    "conditional_bound_probe",
]

COEFFICIENT_KINDS = ("alpha", "rho", "phi", "psi")

_ALPHA_ENUM_LIMIT = 20        # subset enumeration feasibility: 2**limit masks
_WINDOW_CONFIG_LIMIT = 2048   # dense joint-law feasibility per side


# ---------------------------------------------------------------------------
# window joint laws


def _window_configs(A: int, width: int) -> np.ndarray:
    """All state tuples of the given width, as an (A**width, width) array."""
    if A ** width > _WINDOW_CONFIG_LIMIT:
        raise ValueError(
            f"window enumeration budget exceeded: {A}**{width} configurations "
            f"> {_WINDOW_CONFIG_LIMIT}; reduce the window width"
        )
    grid = np.indices((A,) * width).reshape(width, -1).T
    return np.ascontiguousarray(grid)


def window_joint_law(model: ProcessModel, n: int, window: int) -> np.ndarray:
    """Joint law of (past window ending at k, future window starting at k+n).

    Both windows have the given width; the separation ``n`` may be zero, in
    which case the windows share their boundary coordinate.  Stationarity
    makes the law independent of k (windows fully inside the index range).
    """
    if not model.is_finite:
        raise ValueError("window laws need a finite-kind model")
    if n < 0 or window < 1:
        raise ValueError("need n >= 0 and window >= 1")
    A = model.n_states
    P = model.transition
    pi = model.stationary
    conf = _window_configs(A, window)
    within = np.ones(len(conf))
    for k in range(window - 1):
        within *= P[conf[:, k], conf[:, k + 1]]
    past_prob = pi[conf[:, 0]] * within
    fut_prob = within  # same internal factor; initial state handled by link
    if n == 0:
        link = np.eye(A)
    else:
        link = np.linalg.matrix_power(P, n)
    J = past_prob[:, None] * link[conf[:, -1][:, None], conf[:, 0][None, :]] * fut_prob[None, :]
    return J


def _centered(J: np.ndarray):
    p = J.sum(axis=1)
    q = J.sum(axis=0)
    return J - np.outer(p, q), p, q


def _alpha_from_joint(J: np.ndarray) -> float:
    """Cut norm of the centred joint matrix by subset enumeration.

    Enumerates subsets of the smaller side; the optimal set on the other
    side is the positive part of the accumulated rows.  Exponential in the
    smaller side, hence the hard budget.
    """
    d, _, _ = _centered(J)
    if d.shape[0] < d.shape[1]:
        d = d.T
    V = d.shape[1]
    if V > _ALPHA_ENUM_LIMIT:
        raise ValueError(
            f"alpha enumeration budget exceeded: 2**{V} event subsets; "
            "reduce the window width"
        )
    best = 0.0
    masks = np.arange(1, 2 ** V, dtype=np.uint32)
    for lo in range(0, len(masks), 65536):
        chunk = masks[lo:lo + 65536]
        sel = ((chunk[:, None] >> np.arange(V, dtype=np.uint32)) & 1).astype(np.float64)
        rows = sel @ d.T  # (chunk, U)
        vals = np.where(rows > 0, rows, 0.0).sum(axis=1)
        best = max(best, float(vals.max()))
    return best


def _rho_from_joint(J: np.ndarray) -> float:
    d, p, q = _centered(J)
    keep_u = p > 0
    keep_v = q > 0
    Q = d[np.ix_(keep_u, keep_v)] / np.sqrt(np.outer(p[keep_u], q[keep_v]))
    if Q.size == 0:
        return 0.0
    s = np.linalg.svd(Q, compute_uv=False)
    return float(min(max(s[0], 0.0), 1.0))


def _phi_from_joint(J: np.ndarray) -> float:
    p = J.sum(axis=1)
    q = J.sum(axis=0)
    keep = p > 0
    cond = J[keep] / p[keep, None]
    return float(0.5 * np.abs(cond - q[None, :]).sum(axis=1).max())


def _psi_from_joint(J: np.ndarray) -> float:
    p = J.sum(axis=1)
    q = J.sum(axis=0)
    mask = np.outer(p, q) > 0
    ratio = np.ones_like(J)
    ratio[mask] = J[mask] / np.outer(p, q)[mask]
    return float(np.abs(ratio - 1.0).max())


def coefficient(model: ProcessModel, n: int, kind: str, window: int = 1) -> float:
    """Exact dependence coefficient at separation ``n``.

    Parameters
    ----------
    model : ProcessModel
        Finite-kind model; the coefficient is that of the driving chain's
        filtration.
    n : int
        Separation between the past and future windows, ``n >= 0``.
    kind : str
        One of ``alpha``, ``rho``, ``phi``, ``psi``.
    window : int
        Width of both enumerated windows.  ``window=1`` already equals the
        infinite-window coefficient for Markov filtrations.
    """
    if kind not in COEFFICIENT_KINDS:
        raise ValueError(f"unknown coefficient kind {kind!r}")
    J = window_joint_law(model, n, window)
    if kind == "alpha":
        return _alpha_from_joint(J)
    if kind == "rho":
        return _rho_from_joint(J)
    if kind == "phi":
        return _phi_from_joint(J)
    return _psi_from_joint(J)


def varpi(model: ProcessModel, n: int, q: float, p: float, window: int = 1) -> float:
    """Conditional-expectation operator norm at one of the four corner pairs.

    Exact values exist only at ``(inf,1)``, ``(2,2)``, ``(inf,inf)``,
    ``(1,inf)``; other pairs should go through :func:`interpolation_bounds`.
    """
    pair = (q, p)
    if pair == (math.inf, 1):
        return 4.0 * coefficient(model, n, "alpha", window)
    if pair == (2, 2):
        return coefficient(model, n, "rho", window)
    if pair == (math.inf, math.inf):
        return 2.0 * coefficient(model, n, "phi", window)
    if pair == (1, math.inf):
        return coefficient(model, n, "psi", window)
    raise ValueError(
        f"no exact norm at (q,p)=({q},{p}); use interpolation_bounds"
    )


# ---------------------------------------------------------------------------
# window approximation coefficient


def beta_coefficient(model: ProcessModel, n: int, p: float = math.inf) -> float:
    """``L^p`` distance between the observable and its window conditional.

    ``sup_m || X(m) - E(X(m) | chain states within distance n) ||_p``; by
    stationarity a single interior ``m`` realises the supremum.  Plain chain
    observables are window-measurable (value 0).  Smeared observables are
    integrated exactly over the tail configurations beyond the window.
    """
    if not model.is_finite:
        raise ValueError("window approximation needs a finite-kind model")
    if n < 0:
        raise ValueError("n must be nonnegative")
    if model.kind in ("iid", "markov_chain"):
        return 0.0
    w = model.smear_weights
    J = len(w) - 1
    if n >= J:
        return 0.0
    A = model.n_states
    tail_len = J - n + 1  # states at window edge and beyond: xi_{m+n..m+J}
    if A ** tail_len > 2_000_000:
        raise ValueError("tail enumeration budget exceeded; increase n or shorten weights")
    P = model.transition
    pi = model.stationary
    f = model.states
    # predicted tail from the window edge state
    preds = np.zeros(A)
    acc = np.eye(A)
    for j in range(n + 1, J + 1):
        acc = acc @ P
        preds += w[j] * (acc @ f)
    total_p = 0.0
    worst = 0.0
    for conf in itertools.product(range(A), repeat=tail_len):
        prob = pi[conf[0]]
        for a, b in zip(conf[:-1], conf[1:]):
            prob *= P[a, b]
        if prob == 0.0:
            continue
        delta = -preds[conf[0]]
        for j in range(n + 1, J + 1):
            delta += w[j] * f[conf[j - n]]
        worst = max(worst, abs(delta))
        if p != math.inf:
            total_p += prob * abs(delta) ** p
    if p == math.inf:
        return float(worst)
    return float(total_p ** (1.0 / p))


# ---------------------------------------------------------------------------
# interpolation bounds


def interpolation_bounds(alpha: float, rho: float, phi: float,
                         q: float, p: float) -> float:
    """Upper bound for the (q, p) operator norm from the named coefficients.

    Riesz-Thorin interpolation from each corner against the trivial bound 2,
    with the interpolation constants kept explicit:

    * alpha path: ``4 * (2 alpha)**x`` with ``x = 1/p - 1/q``,
    * rho path: ``2**(1+t) * rho**(1-t)`` with the smallest admissible
      interpolation weight ``t = max(x, 2/p - 1, 1 - 2/q)``,
    * phi path: ``4 * phi**(1 - 1/p)``,

    all cut off at the trivial bound 2.  Requires ``q >= p >= 1``.
    """
    if p < 1 or q < p:
        raise ValueError("need q >= p >= 1")
    for name, val in (("alpha", alpha), ("rho", rho), ("phi", phi)):
        if val < 0:
            raise ValueError(f"{name} must be nonnegative")
    inv_p = 0.0 if p == math.inf else 1.0 / p
    inv_q = 0.0 if q == math.inf else 1.0 / q
    x = inv_p - inv_q

    def _pow(base, expo):
        if expo == 0.0:
            return 1.0
        return float(base) ** expo

    bound_alpha = 4.0 * _pow(2.0 * alpha, x)
    t = max(x, 2.0 * inv_p - 1.0, 1.0 - 2.0 * inv_q, 0.0)
    bound_rho = 2.0 ** (1.0 + t) * _pow(rho, 1.0 - t)
    bound_phi = 4.0 * _pow(phi, 1.0 - inv_p)
    return min(bound_alpha, bound_rho, bound_phi, 2.0)


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class MixingReport:
    """Tabulated coefficients over a grid of separations."""

    ns: np.ndarray
    values: dict            # kind -> ndarray aligned with ns
    window_width: int
    model_id: str

    def value(self, kind: str, n: int) -> float:
        idx = int(np.nonzero(self.ns == n)[0][0])
        return float(self.values[kind][idx])

    def operator_norm_bounds(self, q: float, p: float) -> np.ndarray:
        """Interpolated (q, p) norm bound for every tabulated separation."""
        return np.array([
            interpolation_bounds(self.values["alpha"][i], self.values["rho"][i],
                                 self.values["phi"][i], q, p)
            for i in range(len(self.ns))
        ])

    def to_csv(self, path) -> None:
        kinds = sorted(self.values)
        with open(path, "w") as fh:
            fh.write("n," + ",".join(kinds) + "\n")
            for i, n in enumerate(self.ns):
                row = ",".join(repr(float(self.values[k][i])) for k in kinds)
                fh.write(f"{int(n)},{row}\n")


def mixing_report(model: ProcessModel, ns: Sequence[int],
                  kinds: Sequence[str] = COEFFICIENT_KINDS,
                  window: int = 1) -> MixingReport:
    ns_arr = np.asarray(sorted(set(int(n) for n in ns)), dtype=np.int64)
    values = {
        kind: np.array([coefficient(model, int(n), kind, window) for n in ns_arr])
        for kind in kinds
    }
    return MixingReport(ns_arr, values, window, model.model_id)


def beta_profile(model: ProcessModel, ns: Sequence[int], p: float = math.inf) -> np.ndarray:
    return np.array([beta_coefficient(model, int(n), p) for n in ns])


# ---------------------------------------------------------------------------
# assumption verification


@dataclass(frozen=True)
class AssumptionParams:
    """Exponent bookkeeping for the summability conditions.

    ``p`` and ``q`` are the norm orders of the window approximation and of
    the operator-norm series, ``delta`` the polynomial weight in both series,
    ``m`` the observable moment order, ``iota`` and ``kappa`` the growth and
    Hoelder exponents of the observable, ``ell`` the number of sum arguments
    and ``dim`` the observable dimension.
    """

    p: float
    q: float
    delta: float
    m: float
    iota: int
    kappa: float
    ell: int
    dim: int = 1

    @property
    def d(self) -> int:
        return (self.ell - 1) * self.dim


@dataclass(frozen=True)
class ConditionCheck:
    name: str
    status: str              # PASS / FAIL / INCONCLUSIVE
    details: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AssumptionCertificate:
    checks: tuple
    status: str

    def to_json(self, path=None) -> str:
        payload = {
            "status": self.status,
            "checks": [
                {"name": c.name, "status": c.status, "details": c.details}
                for c in self.checks
            ],
        }
        text = json.dumps(payload, sort_keys=True, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _series_check(name: str, ns, terms, fit_from: Optional[int] = None) -> ConditionCheck:
    """Convergence verdict for a positive series from its leading terms.

    Partial sum plus a geometric tail bound fitted on the trailing half of
    the positive terms.  All terms zero => trivially summable.  A poor
    geometric fit or a fitted rate >= 1 yields INCONCLUSIVE/FAIL.
    """
    ns = np.asarray(ns, dtype=np.float64)
    terms = np.asarray(terms, dtype=np.float64)
    partial = float(terms.sum())
    pos = terms > 0
    if pos.sum() == 0:
        return ConditionCheck(name, "PASS", {"partial_sum": 0.0, "tail_bound": 0.0,
                                             "note": "all terms vanish"})
    half = max(int(pos.sum() // 2), 2)
    idx = np.nonzero(pos)[0][-half:]
    fit = geometric_fit(ns[idx], terms[idx])
    details = {"partial_sum": partial, "fit_rate": fit.rate,
               "fit_log_residual": fit.max_log_residual}
    if fit.n_points < 2 or fit.max_log_residual > 0.5:
        details["note"] = "tail not geometrically regular over the probed range"
        return ConditionCheck(name, "INCONCLUSIVE", details)
    if not fit.converged:
        details["note"] = "fitted tail rate >= 1"
        return ConditionCheck(name, "FAIL", details)
    tail = power_geometric_tail(fit.c, fit.rate, 0.0, int(ns[idx][-1]) + 1)
    details["tail_bound"] = tail
    if not math.isfinite(tail):
        return ConditionCheck(name, "INCONCLUSIVE", details)
    details["series_bound"] = partial + tail
    return ConditionCheck(name, "PASS", details)


def verify_assumption(report: MixingReport, beta_values: Sequence[float],
                      params: AssumptionParams,
                      moments: MomentTable) -> AssumptionCertificate:
    """Check the joint summability/moment conditions behind the limit theorems.

    Four conditions:

    1. the weight exponent fits under the observable regularity:
       ``delta < kappa - d/p``,
    2. the moment budget ``1/(2+delta) >= 1/p + (iota+2)/m + delta/q``,
    3. required absolute moments are finite (``m`` and ``2q(iota+2)``),
    4. the weighted operator-norm series ``sum n^delta varpi_{q,p}(n)`` and
       the weighted window-approximation series ``sum (r beta_q(r))^delta``
       both converge (partial sum + fitted geometric tail).
    """
    checks = []

    gate = params.kappa - params.d / params.p
    checks.append(ConditionCheck(
        "weight_exponent_gate",
        "PASS" if params.delta < gate else "FAIL",
        {"delta": params.delta, "bound": gate},
    ))

    lhs = 1.0 / (2.0 + params.delta)
    rhs = (0.0 if params.p == math.inf else 1.0 / params.p) \
        + (params.iota + 2.0) / params.m \
        + (0.0 if params.q == math.inf else params.delta / params.q)
    checks.append(ConditionCheck(
        "moment_budget",
        "PASS" if lhs >= rhs - 1e-12 else "FAIL",
        {"lhs": lhs, "rhs": rhs},
    ))

    high_order = 2.0 * params.q * (params.iota + 2.0)
    try:
        gm = moments.gamma(params.m)
        finite_m = math.isfinite(gm)
    except KeyError:
        gm, finite_m = None, False
    details = {"gamma_m": gm, "required_high_order": high_order}
    checks.append(ConditionCheck(
        "moments_finite",
        "PASS" if finite_m else "INCONCLUSIVE",
        details,
    ))

    ns = report.ns
    bounds = report.operator_norm_bounds(params.q, params.p)
    weighted = np.asarray(ns, dtype=np.float64) ** params.delta * bounds
    weighted[ns == 0] = 0.0
    checks.append(_series_check("operator_norm_series", ns, weighted))

    beta = np.asarray(beta_values, dtype=np.float64)
    rs = np.arange(len(beta), dtype=np.float64)
    bterms = (rs * beta) ** params.delta
    bterms[0] = 0.0
    checks.append(_series_check("window_approximation_series", rs, bterms))

    statuses = [c.status for c in checks]
    if "FAIL" in statuses:
        overall = "FAIL"
    elif "INCONCLUSIVE" in statuses:
        overall = "INCONCLUSIVE"
    else:
        overall = "PASS"
    return AssumptionCertificate(tuple(checks), overall)


# ---------------------------------------------------------------------------
# conditional-expectation decay probe


def conditional_bound_probe(model: ProcessModel, ns: Sequence[int],
                            norm: float = 2.0) -> dict:
    """Decay of ``||E(f(X, future) | past) - (E f)(X)||`` with separation.

    Probes the parameterised test function ``f(x, omega) = x * X(n)``: the
    conditional expectation given the past collapses to transition powers,
    so the norm is enumerable exactly.  Returns the value table, a verdict
    on monotone decay, and the fitted geometric rate compared with the
    chain's maximal-correlation rate.
    """
    if model.kind not in ("iid", "markov_chain"):
        raise ValueError("probe needs a plain chain model")
    ns_arr = np.asarray(sorted(set(int(n) for n in ns)), dtype=np.int64)
    if np.any(ns_arr < 1):
        raise ValueError("separations must be >= 1")
    P = model.transition
    pi = model.stationary
    f = model.states
    mean = float(pi @ f)
    vals = []
    for n in ns_arr:
        pred = np.linalg.matrix_power(P, int(n)) @ f
        g = f * (pred - mean)
        if norm == math.inf:
            vals.append(float(np.abs(g).max()))
        else:
            vals.append(float((pi @ np.abs(g) ** norm) ** (1.0 / norm)))
    vals = np.array(vals)
    monotone = bool(np.all(np.diff(vals) <= 1e-12))
    fit = geometric_fit(ns_arr, vals)
    rho_rate = model.spectral_gap_rate()
    return {
        "ns": ns_arr,
        "values": vals,
        "monotone_decay": monotone,
        "fit_rate": fit.rate,
        "rho_rate": rho_rate,
        "decay_at_least_rho": bool(fit.rate <= rho_rate + 1e-8),
    }
