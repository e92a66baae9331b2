"""Skorokhod embedding of the block martingale into a Brownian motion.

Three layers:

* exact conditional increment laws: a small dynamic program walks the chain
  between consecutive cuts, branching at argument positions, and returns the
  discrete law of one martingale difference ``M_i(j)`` jointly with the
  chain state at the next cut (so the sequence can be generated forward
  without ever materialising a trajectory);
* the randomized two-point rule: a centred discrete law ``mu`` is embedded
  by drawing a negative/positive atom pair ``(u, v)`` with probability
  ``mu(u) mu(v) (v - u) / m``, ``m = sum_{u<0} |u| mu(u)``, and stopping a
  Brownian motion at the exit of ``(u, v)``; the exit value then has law
  ``mu`` and the stopping time has mean ``E X^2``;
* a chunked Gaussian walk with a Brownian-bridge crossing correction:
  within-step boundary hits are sampled with probability
  ``exp(-2 d_prev d_next / h)``, which removes the O(sqrt(h)) bias a purely
  sampled-point exit detection would leave.

Forward mode (law-driven generation plus embedding) reproduces the joint
law of the martingale partial sums exactly when increments are conditionally
lattice-valued given the threaded state, which covers single-argument chain
components and centred product observables on iid alphabets.  For components
whose increment law depends on realised past arguments, the coupled mode
embeds the increments of one realised trajectory: conditionally on the
realised value ``x > 0`` the negative endpoint has law proportional to
``|u| mu(u)`` independently of ``x``, and the walk is rerun until it exits
on the realised side, which samples the correct conditional stopping time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from nonconv.blocks import BlockRealization, BlockSchedule, TransitionPowers
from nonconv.models import ProcessModel
from nonconv.sums import Decomposition, QFamily

__all__ = [
    "DiscreteLaw",
    "JointIncrementLaw",
    "TwoPointEmbedding",
    "BrownianWalk",
    "ChainIncrementLaws",
    "iid_product_law",
    "CoupledIncrementLaws",
    "EmbeddedPath",
    "walk_step",
    "forward_embedded_sums",
    "coupled_embedding_times",
]

_QUANTUM = 1e-9


@dataclass(frozen=True)
class DiscreteLaw:
    """Finitely supported law; values sorted, probabilities positive."""

    values: np.ndarray
    probs: np.ndarray

    @staticmethod
    def from_atoms(pairs, quantum: float = _QUANTUM) -> "DiscreteLaw":
        """Merge (value, prob) pairs on a value lattice of the given pitch."""
        acc: dict = {}
        for v, p in pairs:
            if p <= 0:
                continue
            key = round(v / quantum)
            acc[key] = acc.get(key, 0.0) + p
        keys = sorted(acc)
        vals = np.array([k * quantum for k in keys])
        probs = np.array([acc[k] for k in keys])
        return DiscreteLaw(vals, probs / probs.sum())

    def mean(self) -> float:
        return float(self.values @ self.probs)

    def second_moment(self) -> float:
        return float((self.values ** 2) @ self.probs)

    def variance(self) -> float:
        return self.second_moment() - self.mean() ** 2

    def fourth_moment(self) -> float:
        return float((self.values ** 4) @ self.probs)

    def sample(self, rng, size=None):
        return rng.choice(self.values, size=size, p=self.probs)


@dataclass(frozen=True)
class JointIncrementLaw:
    """Law of (increment value, next cut state) given the current cut state.

    ``end_given_value[a]`` is the conditional next-state row for value atom
    ``a``; the value marginal alone drives the embedding, the conditional
    row threads the chain forward.
    """

    values: np.ndarray
    probs: np.ndarray
    end_given_value: np.ndarray

    def marginal(self) -> DiscreteLaw:
        return DiscreteLaw(self.values, self.probs)

    @staticmethod
    def from_atom_map(atoms: dict, n_states: int,
                      quantum: float = _QUANTUM) -> "JointIncrementLaw":
        """Build from {(value_key, end_state): prob} with lattice value keys."""
        by_val: dict = {}
        for (vk, z), p in atoms.items():
            row = by_val.setdefault(vk, np.zeros(n_states))
            row[z] += p
        keys = sorted(by_val)
        probs = np.array([by_val[k].sum() for k in keys])
        total = probs.sum()
        cond = np.stack([by_val[k] / by_val[k].sum() for k in keys])
        return JointIncrementLaw(np.array([k * quantum for k in keys]),
                                 probs / total, cond)


# ---------------------------------------------------------------------------
# the two-point rule


class TwoPointEmbedding:
    """Randomized two-point Skorokhod embedding of a centred discrete law."""

    def __init__(self, law: DiscreteLaw, atol: float = 1e-8):
        scale = max(1.0, float(np.max(np.abs(law.values))) if len(law.values) else 1.0)
        if abs(law.mean()) > atol * scale:
            raise ValueError(f"law is not centred (mean {law.mean():.3e})")
        v, p = law.values, law.probs
        neg = v < -_QUANTUM
        pos = v > _QUANTUM
        self.p_zero = float(p[~neg & ~pos].sum())
        self.neg_values = v[neg]
        self.pos_values = v[pos]
        self.m_minus = float(-(v[neg] @ p[neg]))
        if self.m_minus <= 0 and self.p_zero < 1.0 - 1e-12:
            raise ValueError("centred law with mass off zero must charge both signs")
        if self.m_minus > 0:
            # pair law lam(u, v) = mu(u) mu(v) (v - u) / m_minus
            lam = (p[neg][:, None] * p[pos][None, :]
                   * (v[pos][None, :] - v[neg][:, None]) / self.m_minus)
            flat = lam.ravel()
            self._pair_cum = np.cumsum(flat / flat.sum())
            self._pair_shape = lam.shape
            wu = -v[neg] * p[neg]
            self._u_cum = np.cumsum(wu / wu.sum())
            wv = v[pos] * p[pos]
            self._v_cum = np.cumsum(wv / wv.sum())

    def draw_pair(self, rng) -> Optional[tuple]:
        """A pair (u, v) or None for the atom at zero."""
        if rng.random() < self.p_zero:
            return None
        k = int(np.searchsorted(self._pair_cum, rng.random()))
        iu, iv = np.unravel_index(min(k, len(self._pair_cum) - 1), self._pair_shape)
        return float(self.neg_values[iu]), float(self.pos_values[iv])

    def conditional_endpoint(self, rng, x: float) -> float:
        """The unseen endpoint given the realised exit value ``x``.

        Given exit at ``x > 0`` the negative endpoint has law proportional to
        ``|u| mu(u)`` whatever ``x`` is (the ``(v - u)`` pair weight cancels
        against the exit probability ``|u|/(v - u)``); symmetrically for
        ``x < 0``.
        """
        if x > 0:
            k = int(np.searchsorted(self._u_cum, rng.random()))
            return float(self.neg_values[min(k, len(self.neg_values) - 1)])
        k = int(np.searchsorted(self._v_cum, rng.random()))
        return float(self.pos_values[min(k, len(self.pos_values) - 1)])


class BrownianWalk:
    """Chunked Gaussian increment walk with bridge-corrected exits."""

    def __init__(self, rng, step: float, chunk: int = 2048):
        if step <= 0:
            raise ValueError("step must be positive")
        self.rng = rng
        self.h = float(step)
        self.sqrt_h = math.sqrt(step)
        self.chunk = int(chunk)

    def run_exit(self, lo: float, hi: float, query_offsets=None) -> tuple:
        """Run from 0 until exit of (lo, hi); returns (time, side +-1).

        Direct crossings are timed by linear interpolation inside the step;
        non-crossing steps fire a boundary hit with the Brownian-bridge
        probability and are credited half a step.

        ``query_offsets`` (sorted, clock units from the segment start) asks
        for the walk position at those offsets; a third return value holds
        them, ``nan`` for offsets at or past the exit time.
        """
        if not lo < 0 < hi:
            raise ValueError("interval must straddle 0")
        qvals = None
        if query_offsets is not None:
            query_offsets = np.asarray(query_offsets, dtype=np.float64)
            qvals = np.full(len(query_offsets), np.nan)
            q_next = 0
        w = 0.0
        steps_done = 0
        rng = self.rng
        h = self.h
        while True:
            inc = rng.standard_normal(self.chunk) * self.sqrt_h
            path = w + np.cumsum(inc)
            prev = np.empty_like(path)
            prev[0] = w
            prev[1:] = path[:-1]
            up = path >= hi
            dn = path <= lo
            direct = up | dn
            inside = ~direct
            p_up = np.exp(-2.0 * np.maximum(hi - prev, 0.0) * np.maximum(hi - path, 0.0) / h)
            p_dn = np.exp(-2.0 * np.maximum(prev - lo, 0.0) * np.maximum(path - lo, 0.0) / h)
            r1 = rng.random(self.chunk)
            r2 = rng.random(self.chunk)
            b_up = inside & (r1 < p_up)
            b_dn = inside & (r2 < p_dn)
            hit = direct | b_up | b_dn
            tau = side = None
            if np.any(hit):
                k = int(np.argmax(hit))
                base = (steps_done + k) * h
                if direct[k]:
                    side = 1 if up[k] else -1
                    bdry = hi if side == 1 else lo
                    frac = (bdry - prev[k]) / (path[k] - prev[k])
                    tau = base + float(frac) * h
                elif b_up[k] and b_dn[k]:
                    side = 1 if p_up[k] >= p_dn[k] else -1
                    tau = base + 0.5 * h
                else:
                    side = 1 if b_up[k] else -1
                    tau = base + 0.5 * h
            if qvals is not None:
                # positions exist for whole steps strictly before the exit
                limit = tau if tau is not None else (steps_done + self.chunk) * h
                while q_next < len(query_offsets) and query_offsets[q_next] < limit:
                    nsteps = int(query_offsets[q_next] / h)
                    if nsteps <= steps_done:
                        qvals[q_next] = w
                    else:
                        qvals[q_next] = path[nsteps - steps_done - 1]
                    q_next += 1
            if tau is not None:
                if qvals is None:
                    return tau, side
                return tau, side, qvals
            steps_done += self.chunk
            w = float(path[-1])

    def run_exit_conditioned(self, lo: float, hi: float, side: int,
                             max_tries: int = 100_000,
                             query_offsets=None) -> tuple:
        """Exit time conditioned on leaving through the given side.

        Rejected runs are auxiliary randomness: only the accepted run's path
        (and its query values) belongs to the coupled Brownian motion.
        """
        for tries in range(1, max_tries + 1):
            out = self.run_exit(lo, hi, query_offsets=query_offsets)
            if out[1] == side:
                if query_offsets is None:
                    return out[0], tries
                return out[0], tries, out[2]
        raise RuntimeError("conditioned exit did not occur; law/side mismatch?")


# ---------------------------------------------------------------------------
# exact increment laws between cuts


def _cut_index(qf: QFamily, sched: BlockSchedule, i: int, m: int) -> int:
    if m == 0:
        return 0
    return int(qf.index(i, int(sched.b[m - 1]))) + int(sched.r[m - 1])


def _tail_sum_slow(tp: TransitionPowers, qf: QFamily, decomp: Decomposition,
                   i: int, sched: BlockSchedule, c: int, state: int,
                   lookup: Callable, m: int, tol: float) -> float:
    """R_i(m) evaluated with plain loops; ``lookup(index)`` supplies realised
    (or hypothesised) states for known arguments."""
    table = decomp.component_table(i)
    acc = 0.0
    consec = 0
    j = m
    while consec < 2:
        j += 1
        if j > sched.j_max:
            raise RuntimeError("tail sum ran past the schedule margin")
        lo, hi = sched.big_range(j)
        term = 0.0
        for n in range(lo, hi + 1):
            idxs = [qf.index(u, n) for u in range(1, i + 1)]
            cur = np.asarray(table, dtype=np.float64)
            h = sum(1 for q in idxs if q > c)
            for u in range(i - h):
                cur = cur[lookup(idxs[u])]
            for u in range(h - 1, 0, -1):
                g = idxs[i - h + u] - idxs[i - h + u - 1]
                cur = np.einsum("...ab,ab->...a", cur, tp.power(int(g)))
            if h == 0:
                term += float(cur)
            else:
                term += float(tp.power(int(idxs[i - h] - c))[state] @ cur)
        acc += term
        consec = consec + 1 if abs(term) < tol else 0
    return acc


def _block_dp(tp: TransitionPowers, model: ProcessModel, qf: QFamily,
              decomp: Decomposition, i: int, sched: BlockSchedule, j: int,
              start_state: int, lookup: Optional[Callable],
              r_prev: float, tol: float = 1e-10,
              quantum: float = _QUANTUM) -> JointIncrementLaw:
    """Exact law of ``M_i(j)`` and the next cut state, given the cut state
    (and, for multi-argument components, realised arguments via ``lookup``).

    The chain is walked position by position between the two cuts; argument
    positions branch the walk, summand completion positions fold component
    values into the accumulated increment, and future-block arguments that
    fall inside the stretch and matter to the tail sum (beyond ``tol``) are
    carried to the end, where the tail ``R_i(j)`` is evaluated per branch.
    Only components with at most two arguments are supported.
    """
    if i > 2:
        raise NotImplementedError("increment laws implemented for i <= 2")
    c_prev = _cut_index(qf, sched, i, j - 1)
    c_cur = _cut_index(qf, sched, i, j)
    lo, hi = sched.big_range(j)
    table = decomp.component_table(i)
    A = tp.n_states
    vals = model.states

    events: list = []           # (position, kind, payload)
    for n in range(lo, hi + 1):
        idxs = [qf.index(u, n) for u in range(1, i + 1)]
        prefix = []
        for u in range(i - 1):
            q = idxs[u]
            if q <= c_prev:
                if lookup is None:
                    raise ValueError("forward mode needs single-argument components")
                prefix.append(("known", lookup(q)))
            else:
                prefix.append(("walk", q))
                events.append((q, "mark", q))
        events.append((idxs[-1], "fold", (n, tuple(prefix))))
    # future-block arguments inside the stretch whose tail contribution
    # survives the tolerance must be carried through the walk
    rho = model.spectral_gap_rate()
    fmax = float(np.max(np.abs(table)))
    jj = j
    while True:
        jj += 1
        if jj > sched.j_max:
            break
        blo, bhi = sched.big_range(jj)
        gap = qf.index(i, blo) - c_cur
        bound = (bhi - blo + 1) * fmax * 2.0 * rho ** max(gap, 0)
        if bound < tol:
            break
        for n in range(blo, bhi + 1):
            for u in range(1, i):
                q = qf.index(u, n)
                if c_prev < q <= c_cur:
                    events.append((q, "mark", q))

    uniq: dict = {}
    for pos, kind, payload in events:
        uniq.setdefault((pos, kind, payload), None)
    events = sorted(uniq, key=lambda e: (e[0], 0 if e[1] == "mark" else 1))

    # dp state: (chain state, frozen marks, value key) -> probability
    cur_dp = {(start_state, (), 0): 1.0}
    pos_now = c_prev
    for pos, kind, payload in events:
        gap = pos - pos_now
        P_gap = tp.power(int(gap)) if gap > 0 else None
        moved: dict = {}
        for (s, marks, vk), p in cur_dp.items():
            row = P_gap[s] if P_gap is not None else None
            for z in range(A):
                pz = p * (row[z] if row is not None else (1.0 if z == s else 0.0))
                if pz <= 1e-16:
                    continue
                key = (z, marks, vk)
                moved[key] = moved.get(key, 0.0) + pz
        pos_now = pos
        cur_dp = {}
        for (z, marks, vk), p in moved.items():
            if kind == "mark":
                nm = tuple(sorted(set(marks) | {(payload, z)}))
                cur_dp[(z, nm, vk)] = cur_dp.get((z, nm, vk), 0.0) + p
            else:
                n, prefix = payload
                args = []
                mdict = dict(marks)
                for tag, ref in prefix:
                    args.append(ref if tag == "known" else mdict[ref])
                val = float(table[tuple(args) + (z,)])
                nvk = vk + round(val / quantum)
                # marks for the summand's own arguments are consumed here
                own = {qf.index(u, n) for u in range(1, i)}
                nm = tuple(mk for mk in marks if mk[0] not in own or _mark_still_needed(mk[0], events, pos))
                key = (z, nm, nvk)
                cur_dp[key] = cur_dp.get(key, 0.0) + p

    # final hop to the cut, then add the per-branch tail
    atoms: dict = {}
    r_cache: dict = {}
    gap = c_cur - pos_now
    P_gap = tp.power(int(gap)) if gap > 0 else None
    for (s, marks, vk), p in cur_dp.items():
        row = P_gap[s] if P_gap is not None else None
        for z in range(A):
            pz = p * (row[z] if row is not None else (1.0 if z == s else 0.0))
            if pz <= 1e-16:
                continue
            ck = (z, marks)
            if ck not in r_cache:
                mdict = dict(marks)

                def look(idx, _m=mdict):
                    if idx in _m:
                        return _m[idx]
                    if lookup is not None:
                        return lookup(idx)
                    raise KeyError(f"no realised state for index {idx}")

                r_cache[ck] = _tail_sum_slow(tp, qf, decomp, i, sched,
                                             c_cur, z, look, j, tol)
            value_key = vk + round((r_cache[ck] - r_prev) / quantum)
            akey = (value_key, z)
            atoms[akey] = atoms.get(akey, 0.0) + pz
    return JointIncrementLaw.from_atom_map(atoms, A, quantum)


def _mark_still_needed(pos: int, events, current_pos: int) -> bool:
    for epos, kind, payload in events:
        if epos <= current_pos or kind != "fold":
            continue
        n, prefix = payload
        for tag, ref in prefix:
            if tag == "walk" and ref == pos:
                return True
    return False


class ChainIncrementLaws:
    """Forward increment-law provider for single-argument components.

    Laws depend on (block index, current cut state) only; they are exact up
    to the tail-sum tolerance and cached.
    """

    def __init__(self, model: ProcessModel, qf: QFamily, decomp: Decomposition,
                 schedule: BlockSchedule, tol: float = 1e-10):
        self.model = model
        self.qf = qf
        self.decomp = decomp
        self.schedule = schedule
        self.tol = tol
        self.tp = TransitionPowers(model)
        self._laws: dict = {}
        self._r: dict = {}

    def r_value(self, m: int, state: int) -> float:
        key = (m, state)
        if key not in self._r:
            c = _cut_index(self.qf, self.schedule, 1, m)
            self._r[key] = _tail_sum_slow(self.tp, self.qf, self.decomp, 1,
                                          self.schedule, c, state,
                                          lambda idx: None, m, self.tol)
        return self._r[key]

    def law(self, j: int, start_state: int) -> JointIncrementLaw:
        key = (j, start_state)
        if key not in self._laws:
            self._laws[key] = _block_dp(self.tp, self.model, self.qf, self.decomp,
                                        1, self.schedule, j, start_state, None,
                                        self.r_value(j - 1, start_state), self.tol)
        return self._laws[key]


def iid_product_law(model: ProcessModel, decomp: Decomposition,
                    schedule: BlockSchedule, j: int) -> DiscreteLaw:
    """Big-block increment law for a centred product observable on an iid
    alphabet (last component, two arguments).

    Requires every row of the component table to induce the same law under
    the alphabet's stationary measure — then the block sum is a plain
    convolution independent of the realised first arguments, and the
    conditional tail sums vanish identically.
    """
    if model.kind != "iid":
        raise ValueError("this shortcut is for iid models")
    table = decomp.component_table(2)
    pi = model.stationary
    laws = []
    for row in table:
        laws.append(DiscreteLaw.from_atoms(zip(row, pi)))
    ref = laws[0]
    for law in laws[1:]:
        if len(law.values) != len(ref.values) or \
                not np.allclose(law.values, ref.values, atol=1e-12) or \
                not np.allclose(law.probs, ref.probs, atol=1e-12):
            raise ValueError("row laws differ; block law depends on realised arguments")
    lo, hi = schedule.big_range(j)
    out = DiscreteLaw(np.array([0.0]), np.array([1.0]))
    for _ in range(hi - lo + 1):
        pairs = [(a + b, pa * pb) for a, pa in zip(out.values, out.probs)
                 for b, pb in zip(ref.values, ref.probs)]
        out = DiscreteLaw.from_atoms(pairs)
    return out


class CoupledIncrementLaws:
    """Per-realization increment laws for two-argument chain components."""

    def __init__(self, model: ProcessModel, qf: QFamily, decomp: Decomposition,
                 schedule: BlockSchedule, realization: BlockRealization,
                 plan: np.ndarray, states: np.ndarray, tol: float = 1e-10):
        self.model = model
        self.qf = qf
        self.decomp = decomp
        self.schedule = schedule
        self.real = realization
        self.plan = plan
        self.states = states
        self.tol = tol
        self.tp = TransitionPowers(model)

    def _lookup(self, idx: int) -> int:
        k = int(np.searchsorted(self.plan, idx))
        if k >= len(self.plan) or self.plan[k] != idx:
            raise KeyError(f"index {idx} not materialised in the realization")
        return int(self.states[k])

    def law(self, j: int) -> JointIncrementLaw:
        start = int(self.real.cut_states[j - 1])
        return _block_dp(self.tp, self.model, self.qf, self.decomp, 2,
                         self.schedule, j, start, self._lookup,
                         float(self.real.R[j - 1]), self.tol)


# ---------------------------------------------------------------------------
# embedded generation


@dataclass(frozen=True)
class EmbeddedPath:
    """Forward-generated martingale copy with its Brownian clock.

    ``partial_sums[m]`` equals the Brownian motion at ``clock[m]`` by
    construction (sum of embedded exits), so comparing it against directly
    simulated martingale sums tests the whole generation chain.
    """

    values: np.ndarray
    taus: np.ndarray
    states: Optional[np.ndarray] = None

    @property
    def partial_sums(self) -> np.ndarray:
        return np.cumsum(self.values)

    @property
    def clock(self) -> np.ndarray:
        return np.cumsum(self.taus)


def walk_step(variances, factor: float = 1e-4) -> float:
    """Walk step as a fraction of the median embedded-increment variance."""
    med = float(np.median(np.asarray(variances, dtype=np.float64)))
    if med <= 0:
        raise ValueError("nonpositive variance scale")
    return factor * med


def forward_embedded_sums(provider, m: int, seed: int, step: float,
                          stationary: Optional[np.ndarray] = None,
                          chunk: int = 2048) -> EmbeddedPath:
    """Generate ``m`` martingale increments forward through the embedding.

    ``provider`` is either a callable ``j -> DiscreteLaw`` (state-free
    increments, e.g. centred iid products) or an object with
    ``law(j, state)`` returning a :class:`JointIncrementLaw` plus a model
    whose stationary law seeds the state thread.  ``chunk`` sizes the walk's
    draw batches; keep it near the typical exit length.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    walk = BrownianWalk(rng, step, chunk=chunk)
    values = np.empty(m)
    taus = np.empty(m)
    threaded = hasattr(provider, "law")
    emb_cache: dict = {}
    if threaded:
        pi = provider.model.stationary if stationary is None else stationary
        state = int(np.searchsorted(np.cumsum(pi), rng.random()))
        states = np.empty(m + 1, dtype=np.int64)
        states[0] = state
    else:
        states = None
    for j in range(1, m + 1):
        if threaded:
            jlaw = provider.law(j, state)
            key = (j, state)
        else:
            jlaw = provider(j)
            key = j
        if key not in emb_cache:
            marg = jlaw.marginal() if isinstance(jlaw, JointIncrementLaw) else jlaw
            rows = np.cumsum(jlaw.end_given_value, axis=1) if threaded else None
            emb_cache[key] = (jlaw, TwoPointEmbedding(marg), rows)
        jlaw, emb, rows = emb_cache[key]
        pair = emb.draw_pair(rng)
        if pair is None:
            x, tau = 0.0, 0.0
        else:
            u, v = pair
            tau, side = walk.run_exit(u, v)
            x = v if side == 1 else u
        values[j - 1] = x
        taus[j - 1] = tau
        if threaded:
            vals_arr = jlaw.values
            k = int(np.argmin(np.abs(vals_arr - x)))
            if abs(vals_arr[k] - x) > 1e-6:
                raise RuntimeError("embedded exit does not match a law atom")
            state = int(np.searchsorted(rows[k], rng.random()))
            states[j] = state
    return EmbeddedPath(values, taus, states)


def coupled_embedding_times(increments, law_for, seed: int, step: float,
                            zero_atol: float = 1e-7,
                            clock_queries=None) -> tuple:
    """Embed realised increments; returns (stopping times, rejection tries).

    For each realised ``x``: draw the unseen interval endpoint from its
    ``x``-free conditional law, then rerun the walk until it exits on the
    realised side.  ``law_for(j)`` must return the conditional increment law
    whose atom the realised ``x`` is.

    ``clock_queries`` (sorted absolute clock times) additionally reads the
    coupled Brownian path at those times; a third return value holds the
    positions.  Queries past the final stopping time are served by letting
    the walk run on freely.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    walk = BrownianWalk(rng, step)
    m = len(increments)
    taus = np.empty(m)
    tries = np.empty(m, dtype=np.int64)
    queries = None
    if clock_queries is not None:
        queries = np.asarray(clock_queries, dtype=np.float64)
        qvalues = np.full(len(queries), np.nan)
        q_done = 0
    clock = 0.0
    level = 0.0
    for j in range(1, m + 1):
        x = float(increments[j - 1])
        law = law_for(j)
        if abs(x) <= zero_atol:
            taus[j - 1] = 0.0
            tries[j - 1] = 0
            level += x
            continue
        if float(np.min(np.abs(law.values - x))) > 1e-6:
            raise ValueError(f"realised increment {x:.6g} is not an atom of its law")
        emb = TwoPointEmbedding(DiscreteLaw(law.values, law.probs))
        other = emb.conditional_endpoint(rng, x)
        rel = None
        if queries is not None and q_done < len(queries):
            rel = queries[q_done:] - clock
        if x > 0:
            out = walk.run_exit_conditioned(other, x, 1, query_offsets=rel)
        else:
            out = walk.run_exit_conditioned(x, other, -1, query_offsets=rel)
        tau, nt = out[0], out[1]
        if rel is not None:
            vals = out[2]
            got = int(np.count_nonzero(~np.isnan(vals)))   # resolved prefix
            qvalues[q_done:q_done + got] = level + vals[:got]
            q_done += got
        taus[j - 1] = tau
        tries[j - 1] = nt
        clock += tau
        level += x
    if queries is not None:
        if q_done < len(queries):
            rel = queries[q_done:] - clock
            n_need = int(rel[-1] / step) + 1
            seg = np.cumsum(rng.standard_normal(n_need) * math.sqrt(step))
            for ii, o in enumerate(rel):
                nsteps = int(o / step)
                qvalues[q_done + ii] = level + (0.0 if nsteps <= 0 else seg[nsteps - 1])
        return taus, tries, qvalues
    return taus, tries
