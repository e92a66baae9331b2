"""Block schedule and martingale surgery for the component sums.

The time axis is cut into alternating big blocks ``(a(j), b(j)]`` and small
blocks ``(b(j), a(j+1)]`` with

    a(1) = 0,  b(1) = 1,
    a(j) = b(j-1) + floor((j-1)**theta),   b(j) = a(j) + floor(j**tau),

window radii ``r(j) = floor(j**eta)`` and exponents ``4 eta < 2 theta < tau
< 1/2``.  ``nu(t)`` counts the big blocks usable below horizon ``t``.  The
component-``i`` sum then splits exactly as

    Xi_i(t) = sum_{j<=nu} V_i(j)  +  sum_{j<=nu} W_i(j)  +  boundary

(big-block sums, small-block sums capped at ``t``, leftover past
``a(nu+1)``), and each big-block sum is recentred into a martingale
difference against the filtration of cuts ``c_m = q_i(b(m)) + r(m)``:

    M_i(j) = V_i(j) + R_i(j) - R_i(j-1),
    R_i(m) = sum_{j > m} E[V_i(j) | G_m].

``M_i(j)`` is ``G_j``-measurable by construction and the telescoping

    sum_{j<=nu} M_i(j) = sum_{j<=nu} V_i(j) + R_i(nu) - R_i(0)

is pure algebra, so it holds exactly no matter where the ``R`` series is
truncated; truncation only leaves a residual of size ``tail_bound`` in the
martingale property itself.

Conditional expectations are exact: block summands split at the cut into
realised (known) and future arguments, and the future ones are integrated
with transition-power chains from the cut state.  Everything here is
restricted to finite-state chain models, for which the window smoothing is
the identity and the windowing gap term vanishes identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from nonconv.models import ProcessModel, sample_at_indices
from nonconv.sums import Decomposition, QFamily  # noqa: F401  (annotations)

__all__ = [
    "BlockSchedule",
    "build_schedule",
    "TransitionPowers",
    "BlockRealization",
    "realize_blocks",
]


def _ifloor(x: float) -> int:
    # guard against 8**(1/3) = 1.9999...; exponents here are far from
    # rationals that would make the guard itself wrong at desk scales
    return int(math.floor(x + 1e-9))


@dataclass(frozen=True)
class BlockSchedule:
    """Precomputed block boundaries ``a``, ``b``, windows ``r`` (1-based
    blocks stored at slot ``j-1``) and the horizon keys deciding ``nu``."""

    theta: float
    tau: float
    eta: float
    a: np.ndarray
    b: np.ndarray
    r: np.ndarray
    nu_keys: np.ndarray     # b(j) + floor(j**theta)
    t_max: int

    @property
    def j_max(self) -> int:
        return len(self.a)

    def nu(self, t: int) -> int:
        """Number of big blocks available below horizon ``t``."""
        if t < 1:
            return 0
        if t > self.t_max:
            raise ValueError(f"schedule built for t <= {self.t_max}")
        return int(np.searchsorted(self.nu_keys, t + 1, side="right"))

    def nu_bounds(self, t: int) -> tuple:
        """Two-sided growth envelope ``nu(t)`` must respect."""
        lo = (self.tau * t / 2.0) ** (1.0 / (1.0 + self.tau)) - 1.0
        hi = 2.0 * math.floor(t) ** (1.0 / (1.0 + self.tau))
        return lo, hi

    def big_range(self, j: int) -> tuple:
        """Inclusive summand range of big block ``j``."""
        return int(self.a[j - 1]) + 1, int(self.b[j - 1])

    def small_range(self, j: int, t: int) -> tuple:
        """Inclusive summand range of small block ``j``, capped at ``t``."""
        return int(self.b[j - 1]) + 1, min(int(self.a[j]), t)


def build_schedule(theta: float = 0.2, tau: float = 0.45, eta: float = 0.04,
                   t_max: int = 100_000, margin: int = 64) -> BlockSchedule:
    """Block boundaries covering horizons up to ``t_max`` plus a lookahead
    margin used by the conditional-expectation tail sums."""
    if not (4 * eta < 2 * theta < tau < 0.5):
        raise ValueError("need 4*eta < 2*theta < tau < 1/2")
    a = [0]
    b = [1]
    r = [1]
    keys = [2]
    j = 1
    beyond = 0
    while beyond <= margin:
        j += 1
        a_j = b[-1] + _ifloor((j - 1) ** theta)
        b_j = a_j + _ifloor(j ** tau)
        a.append(a_j)
        b.append(b_j)
        r.append(_ifloor(j ** eta))
        keys.append(b_j + _ifloor(j ** theta))
        if keys[-1] > t_max + 1:
            beyond += 1
    return BlockSchedule(theta, tau, eta,
                         np.array(a, dtype=np.int64), np.array(b, dtype=np.int64),
                         np.array(r, dtype=np.int64), np.array(keys, dtype=np.int64),
                         t_max)


class TransitionPowers:
    """Eigendecomposition-backed ``P**g`` with batched ``lambda**g``.

    Complex arithmetic throughout (chains may have complex spectra); callers
    take real parts of final contractions.  Zero eigenvalues (rank-deficient
    transition matrices, e.g. iid) power to zero for ``g > 0``.
    """

    _CACHE_MAX_GAP = 4096

    def __init__(self, model: ProcessModel):
        if model.transition is None:
            raise ValueError("transition powers need a finite chain model")
        P = model.transition.astype(complex)
        lam, V = np.linalg.eig(P)
        self.lam = lam
        self.V = V
        self.Vinv = np.linalg.inv(V)
        self.n_states = len(lam)
        self._cache: dict = {}

    def lam_pows(self, gaps: np.ndarray) -> np.ndarray:
        """``lam**g`` for an int64 array of gaps, shape (len(gaps), A)."""
        g = np.asarray(gaps, dtype=np.float64)[:, None]
        lam = self.lam[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(lam == 0, 0.0 + 0.0j, np.exp(g * np.log(np.where(lam == 0, 1, lam))))
        out[np.asarray(gaps) == 0] = 1.0
        return out

    def power(self, g: int) -> np.ndarray:
        """``P**g`` as a real matrix (small gaps are cached)."""
        if g in self._cache:
            return self._cache[g]
        pw = self.lam_pows(np.array([g]))[0]
        out = np.real(self.V @ (pw[:, None] * self.Vinv))
        if 0 <= g <= self._CACHE_MAX_GAP:
            self._cache[g] = out
        return out

    def validate(self, model: ProcessModel, gaps) -> float:
        """Max deviation from repeated squaring over the given gaps."""
        worst = 0.0
        for g in gaps:
            direct = np.linalg.matrix_power(model.transition, int(g))
            worst = max(worst, float(np.max(np.abs(self.power(int(g)) - direct))))
        return worst


@dataclass(frozen=True)
class BlockRealization:
    """One sampled trajectory reduced to its block/martingale skeleton.

    Everything is for a single component ``i``.  ``R[m]`` is the truncated
    conditional tail sum at cut ``m`` (``m = 0..nu_max``), ``V``/``M`` the
    big-block and martingale-difference arrays (slot ``j-1``), ``y_cum`` the
    prefix sums of the raw summands (so any sub-horizon can be re-read
    without resampling).
    """

    schedule: BlockSchedule
    component: int
    t_max: int
    nu_max: int
    y_cum: np.ndarray
    V: np.ndarray
    R: np.ndarray
    M: np.ndarray
    cut_indices: np.ndarray
    cut_states: np.ndarray
    tail_bound: float
    seed: int
    plan: Optional[np.ndarray] = None
    states: Optional[np.ndarray] = None

    def xi(self, t: int) -> float:
        """Component sum up to ``t``."""
        return float(self.y_cum[t])

    def nu(self, t: int) -> int:
        return self.schedule.nu(t)

    def martingale_sum(self, t: int) -> float:
        return float(np.sum(self.M[: self.nu(t)]))

    def error_report(self, t: int) -> dict:
        """Exact split of ``Xi_i(t) - sum_j M_i(j)`` into its pieces.

        ``recentering`` is ``R(0) - R(nu)``, ``small_blocks`` the capped
        small-block mass, ``boundary`` the leftover past ``a(nu+1)``, and
        ``window_gap`` the window-smoothing gap, identically zero for the
        chain models this module handles.  ``identity_residual`` is the
        rounding-level defect of the assembled identity.
        """
        nu = self.nu(t)
        if nu < 1 or nu > self.nu_max:
            raise ValueError(f"horizon {t} outside realised range")
        sched = self.schedule
        small = 0.0
        for j in range(1, nu + 1):
            lo, hi = sched.small_range(j, t)
            if hi >= lo:
                small += self.y_cum[hi] - self.y_cum[lo - 1]
        edge = min(int(sched.a[nu]), t)
        boundary = float(self.y_cum[t] - self.y_cum[edge])
        i1 = float(self.R[0] - self.R[nu])
        msum = float(np.sum(self.M[:nu]))
        total_err = self.xi(t) - msum
        resid = abs(total_err - (i1 + small + boundary))
        return {
            "t": t,
            "nu": nu,
            "xi": self.xi(t),
            "martingale_sum": msum,
            "total_error": total_err,
            "recentering": i1,
            "small_blocks": float(small),
            "boundary": boundary,
            "window_gap": 0.0,
            "identity_residual": float(resid),
            "tail_bound": self.tail_bound,
        }


def _block_summand_values(decomp, qf, i, states, plan, n_lo, n_hi):
    n = np.arange(n_lo, n_hi + 1, dtype=np.int64)
    gathered = tuple(states[np.searchsorted(plan, qf.index(u, n))] for u in range(1, i + 1))
    return decomp.component_table(i)[gathered]


def _expected_block(tp: TransitionPowers, decomp: Decomposition, qf: QFamily,
                    i: int, cut: int, cut_state: int, states: np.ndarray,
                    plan: np.ndarray, n_lo: int, n_hi: int, wmat) -> float:
    """Exact ``E[sum of block summands | cut state, realised args <= cut]``.

    Arguments of each summand split at the cut into a realised prefix and a
    future suffix (argument indices increase along the tuple).  A length-one
    suffix is contracted in batch through the eigenbasis; longer suffixes
    (which only occur at the first few cuts) walk transition powers
    backwards through the component table.
    """
    n = np.arange(n_lo, n_hi + 1, dtype=np.int64)
    qvals = np.stack([qf.index(u, n) for u in range(1, i + 1)])   # (i, len)
    unknown = qvals > cut
    n_unknown = unknown.sum(axis=0)
    total = 0.0

    one = n_unknown == 1
    if np.any(one):
        gaps = qvals[-1, one] - cut
        if i == 1:
            combos = np.zeros(int(one.sum()), dtype=np.int64)
        else:
            known = [states[np.searchsorted(plan, qvals[u, one])] for u in range(i - 1)]
            combos = np.ravel_multi_index(tuple(known), (tp.n_states,) * (i - 1))
        pw = tp.lam_pows(gaps)                       # (n1, A)
        left = tp.V[cut_state][None, :] * pw         # (n1, A)
        total += float(np.real(np.einsum("np,pn->n", left, wmat[:, combos]).sum()))

    for pos_idx in np.nonzero(n_unknown > 1)[0]:
        h = int(n_unknown[pos_idx])
        idxs = qvals[:, pos_idx]
        table = decomp.component_table(i)
        if i - h > 0:
            known = tuple(int(states[np.searchsorted(plan, idxs[u])]) for u in range(i - h))
            cur = np.asarray(table[known], dtype=np.float64)
        else:
            cur = table.astype(np.float64)
        # integrate the future suffix back to front: each step pairs the
        # transition row index with the surviving axis, elementwise
        for u in range(h - 1, 0, -1):
            g = int(idxs[i - h + u] - idxs[i - h + u - 1])
            cur = np.einsum("...ab,ab->...a", cur, tp.power(g))
        row = tp.power(int(idxs[i - h] - cut))[cut_state]
        total += float(row @ cur)
    return total


def realize_blocks(model: ProcessModel, qf: QFamily, decomp: Decomposition,
                   i: int, schedule: BlockSchedule, t: int, seed: int,
                   tol: float = 1e-11) -> BlockRealization:
    """Sample one trajectory sparsely and build block sums, conditional tail
    sums and martingale differences for component ``i`` up to horizon ``t``.

    The trajectory is materialised only at argument indices, cut indices and
    the origin.  ``R`` tail sums stop once two consecutive future blocks
    contribute below ``tol``; the largest neglected term bound is recorded.
    """
    if model.kind not in ("iid", "markov_chain"):
        raise ValueError("block construction runs on finite chain models")
    nu = schedule.nu(t)
    if nu < 1:
        raise ValueError("horizon too small for a single block")
    lookahead_max = schedule.j_max - nu
    if lookahead_max < 8:
        raise ValueError("schedule margin exhausted; rebuild with larger t_max/margin")

    n_hi_args = int(schedule.b[schedule.j_max - 1])
    pieces = [np.array([0], dtype=np.int64)]
    n_all = np.arange(1, t + 1, dtype=np.int64)
    for u in range(1, i + 1):
        pieces.append(qf.index(u, n_all))
    if i > 1:
        n_ext = np.arange(1, n_hi_args + 1, dtype=np.int64)
        for u in range(1, i):
            pieces.append(qf.index(u, n_ext))
    cuts = np.array([qf.index(i, int(schedule.b[m - 1])) + int(schedule.r[m - 1])
                     for m in range(1, nu + 1)], dtype=np.int64)
    pieces.append(cuts)
    plan = np.unique(np.concatenate(pieces))
    states = sample_at_indices(model, plan, seed)

    y = _block_summand_values(decomp, qf, i, states, plan, 1, t)
    y_cum = np.concatenate([[0.0], np.cumsum(y)])
    bj = schedule.b[:nu].astype(np.int64)
    aj = schedule.a[:nu].astype(np.int64)
    V = y_cum[bj] - y_cum[aj]

    tp = TransitionPowers(model)
    table = decomp.component_table(i)
    # wmat[p, combo] = (Vinv F^T)[p, combo]: F reshaped to (known-combos, last)
    wmat = tp.Vinv @ table.reshape(-1, tp.n_states).T

    cut_indices = np.concatenate([[0], cuts])
    cut_states = states[np.searchsorted(plan, cut_indices)]
    R = np.zeros(nu + 1)
    worst_tail = 0.0
    for m in range(nu + 1):
        c = int(cut_indices[m])
        xi_state = int(cut_states[m])
        acc = 0.0
        consec_small = 0
        j = m
        while consec_small < 2:
            j += 1
            if j > schedule.j_max:
                raise RuntimeError("conditional tail did not settle within the margin")
            lo, hi = schedule.big_range(j)
            term = _expected_block(tp, decomp, qf, i, c, xi_state, states, plan, lo, hi, wmat)
            acc += term
            consec_small = consec_small + 1 if abs(term) < tol else 0
        worst_tail = max(worst_tail, abs(term))
        R[m] = acc
    M = V + R[1:] - R[:-1]
    return BlockRealization(schedule, i, t, nu, y_cum, V, R, M,
                            cut_indices, cut_states, worst_tail, seed,
                            plan, states)
