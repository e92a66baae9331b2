"""Stationary process models with enumerable finite-window laws.

The models here serve as the randomness layer for everything else in the
package.  Four kinds are supported:

``iid``
    independent draws from a finite value alphabet,
``markov_chain``
    a stationary finite-state Markov chain,
``smeared_markov``
    a moving-average observable ``X(m) = sum_j w_j f(xi_{m+j})`` driven by a
    finite chain ``xi``; the observable is *not* measurable with respect to a
    single coordinate, which makes the finite-window approximation error
    nontrivial,
``doubling_map`` / ``gauss_map``
    continuous interval maps exposed as trajectory generators only; their
    symbolic digit quotients (finite-state) are available through
    :func:`symbolic_quotient` so that exact window enumeration applies.

All randomness flows through ``numpy.random.Generator`` seeded explicitly, so
every sampled object is bit-reproducible from ``(model, seed, length)``.
"""

from __future__ import annotations

import hashlib
import math
import struct
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "ProcessModel",
    "Trajectory",
    "MomentTable",
    "build_process",
    "iid_model",
    "markov_model",
    "smeared_model",
    "two_state_chain",
    "rademacher_iid",
    "doubling_map_model",
    "gauss_map_model",
    "symbolic_quotient",
    "sample_path",
    "sample_at_indices",
    "pair_distribution",
    "conditional_expectation",
    "moment_table",
    "export_trajectory",
    "read_trajectory",
]

_FINITE_KINDS = ("iid", "markov_chain", "smeared_markov")
_CONTINUOUS_KINDS = ("doubling_map", "gauss_map")

# Binary trajectory files: 8-byte magic, u32 version, u32 count, then
# little-endian float64 payload.  16-byte header total.
_TRAJ_MAGIC = b"NCSMTRJ\x00"
_TRAJ_VERSION = 1


@dataclass(frozen=True)
class ProcessModel:
    """A stationary process specification.

    Attributes
    ----------
    kind : str
        One of ``iid``, ``markov_chain``, ``smeared_markov``,
        ``doubling_map``, ``gauss_map``.
    states : ndarray or None
        Observable value per chain state, shape ``(A,)``.  ``None`` for the
        continuous kinds.
    transition : ndarray or None
        Row-stochastic transition matrix of the driving chain, shape
        ``(A, A)``.  For ``iid`` every row equals the stationary law.
    stationary : ndarray or None
        Stationary law of the driving chain.
    smear_weights : ndarray or None
        Finite moving-average weights ``w_0..w_J`` (``smeared_markov`` only).
    """

    kind: str
    states: Optional[np.ndarray] = None
    transition: Optional[np.ndarray] = None
    stationary: Optional[np.ndarray] = None
    smear_weights: Optional[np.ndarray] = None
    params: dict = field(default_factory=dict)

    @property
    def is_finite(self) -> bool:
        return self.kind in _FINITE_KINDS

    @property
    def n_states(self) -> int:
        if self.states is None:
            raise ValueError(f"{self.kind} model has no finite state space")
        return len(self.states)

    @property
    def model_id(self) -> str:
        h = hashlib.sha256()
        h.update(self.kind.encode())
        for arr in (self.states, self.transition, self.stationary, self.smear_weights):
            if arr is not None:
                h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        for k in sorted(self.params):
            h.update(f"{k}={self.params[k]}".encode())
        return f"{self.kind}-{h.hexdigest()[:12]}"

    def spectral_gap_rate(self) -> float:
        """Modulus of the second-largest transition eigenvalue.

        Governs the geometric decay rate of every dependence coefficient of
        the driving chain; 0.0 for iid.
        """
        if self.transition is None:
            raise ValueError("no transition matrix")
        lams = np.sort(np.abs(np.linalg.eigvals(self.transition)))[::-1]
        return float(lams[1]) if len(lams) > 1 else 0.0


@dataclass(frozen=True)
class Trajectory:
    """A sampled path of observable values.

    ``values[m]`` is ``X(m)`` for ``0 <= m <= T``.  For chain-driven models
    ``chain`` holds the underlying state indices (longer than ``values`` for
    smeared models, whose observable looks ahead).
    """

    values: np.ndarray
    seed: int
    model_id: str
    chain: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class MomentTable:
    """Absolute moments ``gamma_theta = E|X|^theta`` of the stationary law."""

    thetas: np.ndarray
    gammas: np.ndarray

    def gamma(self, theta: float) -> float:
        idx = np.nonzero(np.isclose(self.thetas, theta))[0]
        if len(idx) == 0:
            raise KeyError(f"theta={theta} not tabulated")
        return float(self.gammas[idx[0]])


# ---------------------------------------------------------------------------
# constructors


def _check_transition(transition: np.ndarray) -> np.ndarray:
    P = np.asarray(transition, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("transition matrix must be square")
    if np.any(P < -1e-15):
        raise ValueError("transition matrix has a negative entry")
    rows = P.sum(axis=1)
    if not np.allclose(rows, 1.0, atol=1e-10):
        bad = rows[np.argmax(np.abs(rows - 1.0))]
        raise ValueError(f"transition row sum != 1 (got {bad!r})")
    return np.clip(P, 0.0, 1.0)


def _stationary_law(P: np.ndarray) -> np.ndarray:
    """Unique stationary law of an aperiodic irreducible chain.

    Raises if the chain is reducible or periodic (more than one eigenvalue
    on the unit circle), since stationarity of every window law is assumed
    throughout.
    """
    lams, vecs = np.linalg.eig(P.T)
    on_circle = np.abs(np.abs(lams) - 1.0) < 1e-10
    if on_circle.sum() != 1:
        raise ValueError(
            "chain is reducible or periodic: stationary law is not unique "
            f"({int(on_circle.sum())} eigenvalues on the unit circle)"
        )
    v = np.real(vecs[:, np.argmax(np.abs(lams))])
    pi = v / v.sum()
    if np.any(pi < -1e-12):
        raise ValueError("stationary eigenvector is not a probability law")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def markov_model(states: Sequence[float], transition) -> ProcessModel:
    """Finite-state Markov chain with observable value per state."""
    values = np.asarray(states, dtype=np.float64)
    P = _check_transition(transition)
    if len(values) != P.shape[0]:
        raise ValueError("states and transition sizes differ")
    pi = _stationary_law(P)
    return ProcessModel("markov_chain", values, P, pi)


def iid_model(states: Sequence[float], probs: Sequence[float]) -> ProcessModel:
    """Independent draws from a finite alphabet."""
    values = np.asarray(states, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < 0) or not math.isclose(p.sum(), 1.0, abs_tol=1e-10):
        raise ValueError("probabilities must be nonnegative and sum to 1")
    P = np.tile(p, (len(p), 1))
    return ProcessModel("iid", values, P, p.copy())


def smeared_model(base: ProcessModel, weights: Sequence[float]) -> ProcessModel:
    """Moving-average observable over a driving finite chain.

    ``X(m) = sum_{j=0}^{J} w_j f(xi_{m+j})`` where ``f`` is the base model's
    state observable.  The driving chain keeps the base transition law.
    """
    if base.kind not in ("iid", "markov_chain"):
        raise ValueError("smeared model needs a finite chain base")
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or len(w) == 0:
        raise ValueError("weights must be a nonempty 1-d sequence")
    return ProcessModel(
        "smeared_markov", base.states.copy(), base.transition.copy(),
        base.stationary.copy(), smear_weights=w,
    )


def two_state_chain(flip: float = 0.3, values: Sequence[float] = (-1.0, 1.0)) -> ProcessModel:
    """Symmetric two-state chain with the given flip probability."""
    if not 0.0 < flip < 1.0:
        raise ValueError("flip probability must lie in (0, 1)")
    P = [[1.0 - flip, flip], [flip, 1.0 - flip]]
    return markov_model(values, P)


def rademacher_iid() -> ProcessModel:
    """Fair independent signs."""
    return iid_model([-1.0, 1.0], [0.5, 0.5])


def doubling_map_model() -> ProcessModel:
    """The map x -> 2x mod 1 with Lebesgue as invariant law."""
    return ProcessModel("doubling_map")


def gauss_map_model() -> ProcessModel:
    """The map x -> frac(1/x) with the Gauss measure as invariant law."""
    return ProcessModel("gauss_map")


def build_process(spec: dict) -> ProcessModel:
    """Build a model from a plain-dict specification (config-file entry).

    Recognised ``kind`` values and their fields::

        {"kind": "iid", "states": [...], "probs": [...]}
        {"kind": "markov_chain", "states": [...], "transition": [[...], ...]}
        {"kind": "smeared_markov", "base": {...}, "weights": [...]}
        {"kind": "doubling_map"}
        {"kind": "gauss_map"}
    """
    if "kind" not in spec:
        raise ValueError("model spec needs a 'kind' field")
    kind = spec["kind"]
    if kind == "iid":
        return iid_model(spec["states"], spec["probs"])
    if kind == "markov_chain":
        return markov_model(spec["states"], spec["transition"])
    if kind == "smeared_markov":
        return smeared_model(build_process(spec["base"]), spec["weights"])
    if kind == "doubling_map":
        return doubling_map_model()
    if kind == "gauss_map":
        return gauss_map_model()
    raise ValueError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# digit quotients of the interval maps


def gauss_digit_probability(j: int) -> float:
    """Gauss-measure mass of the first continued-fraction digit ``j``."""
    return math.log2(1.0 + 1.0 / (j * (j + 2)))


def gauss_digit_pair_probability(j: int, k: int) -> float:
    """Gauss-measure mass of the digit cylinder ``(j, k)``.

    The cylinder is the interval between ``[0; j, k]`` and ``[0; j, k+1]``;
    its Gauss measure is ``|log2((1+b)/(1+a))|`` for the endpoint pair.
    """
    a = k / (j * k + 1.0)
    b = (k + 1.0) / (j * (k + 1.0) + 1.0)
    lo, hi = min(a, b), max(a, b)
    return math.log2((1.0 + hi) / (1.0 + lo))


def symbolic_quotient(model: ProcessModel, top_digits: int = 6) -> ProcessModel:
    """Finite-state digit quotient of an interval-map model.

    The doubling map quotient is the iid fair-bit process.  The Gauss map
    quotient keeps digits ``1..top_digits-1`` and pools the remainder into a
    single state whose transition row is recovered exactly from stationarity
    (column marginals of the pair law equal the digit law).  The pooled
    state's observable value is ``top_digits``.
    """
    if model.kind == "doubling_map":
        return iid_model([0.0, 1.0], [0.5, 0.5])
    if model.kind != "gauss_map":
        raise ValueError("symbolic quotient applies to interval-map models")
    if top_digits < 2:
        raise ValueError("need at least two digit classes")
    B = top_digits
    digits = list(range(1, B))
    p1 = np.array([gauss_digit_probability(j) for j in digits])
    pooled = 1.0 - p1.sum()
    joint = np.zeros((B, B))
    for a, j in enumerate(digits):
        for b, k in enumerate(digits):
            joint[a, b] = gauss_digit_pair_probability(j, k)
        joint[a, B - 1] = p1[a] - joint[a, : B - 1].sum()
    # pooled row via stationarity: column sums must reproduce the digit law
    for b in range(B - 1):
        joint[B - 1, b] = p1[b] - joint[: B - 1, b].sum()
    joint[B - 1, B - 1] = pooled - joint[B - 1, : B - 1].sum()
    law = np.append(p1, pooled)
    P = joint / law[:, None]
    values = np.array([float(j) for j in digits] + [float(B)])
    m = markov_model(values, P)
    return ProcessModel("markov_chain", m.states, m.transition, m.stationary,
                        params={"quotient_of": "gauss_map", "top_digits": B})


# ---------------------------------------------------------------------------
# sampling


def _chain_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def _sample_chain(model: ProcessModel, length: int, rng: np.random.Generator) -> np.ndarray:
    """Sample ``length`` states of the driving chain, stationary start."""
    A = model.n_states
    pi = model.stationary
    P = model.transition
    out = np.empty(length, dtype=np.int64)
    if model.kind == "iid" or np.allclose(P, pi[None, :], atol=1e-15):
        # rows all equal: one vectorised draw
        return rng.choice(A, size=length, p=pi)
    u = rng.random(length).tolist()
    cum = [list(np.cumsum(row)[:-1]) for row in P]
    cum_pi = list(np.cumsum(pi)[:-1])
    s = bisect_right(cum_pi, u[0])
    out[0] = s
    for m in range(1, length):
        s = bisect_right(cum[s], u[m])
        out[m] = s
    return out


def _doubling_values(length: int, rng: np.random.Generator) -> np.ndarray:
    # sliding 53-bit window over an iid bit stream; avoids the bit-depletion
    # of iterating 2x mod 1 in floating point
    bits = rng.integers(0, 2, size=length + 53)
    w = 0.5 ** np.arange(1, 54)
    windows = np.lib.stride_tricks.sliding_window_view(bits, 53)[:length]
    return windows @ w


def _gauss_values(length: int, rng: np.random.Generator) -> np.ndarray:
    x = math.pow(2.0, rng.random()) - 1.0  # inverse CDF of the Gauss law
    out = np.empty(length)
    for n in range(length):
        out[n] = x
        y = 1.0 / max(x, 1e-300)
        x = y - math.floor(y)
        if x <= 0.0 or x >= 1.0:
            x = math.pow(2.0, rng.random()) - 1.0
    return out


def sample_path(model: ProcessModel, length: int, seed: int) -> Trajectory:
    """Sample ``X(0..length)`` under the stationary law.

    Returns a :class:`Trajectory` with ``length + 1`` values; identical
    ``(model, seed, length)`` triples give byte-identical output.
    """
    if length < 0:
        raise ValueError("length must be nonnegative")
    rng = _chain_rng(seed)
    n = length + 1
    if model.kind == "doubling_map":
        return Trajectory(_doubling_values(n, rng), seed, model.model_id)
    if model.kind == "gauss_map":
        return Trajectory(_gauss_values(n, rng), seed, model.model_id)
    if model.kind == "smeared_markov":
        J = len(model.smear_weights) - 1
        chain = _sample_chain(model, n + J, rng)
        f = model.states[chain]
        w = model.smear_weights
        vals = np.lib.stride_tricks.sliding_window_view(f, J + 1)[:n] @ w
        return Trajectory(vals, seed, model.model_id, chain=chain)
    chain = _sample_chain(model, n, rng)
    return Trajectory(model.states[chain], seed, model.model_id, chain=chain)


def _power_cutoff(model: ProcessModel) -> int:
    """Gap beyond which P^gap is the stationary projector to 1e-16."""
    rate = model.spectral_gap_rate()
    if rate <= 1e-14:
        return 1
    return max(1, int(math.ceil(math.log(1e-16) / math.log(rate))))


def sample_at_indices(model: ProcessModel, indices: np.ndarray, seed: int) -> np.ndarray:
    """Chain states at a sparse sorted index set, consistent with the chain law.

    Only the requested coordinates are materialised: gaps are bridged by
    ``P^gap`` transitions, and gaps long enough that ``P^gap`` is numerically
    stationary restart from the stationary law.  This is what makes horizons
    with fast-growing index maps (e.g. ``n^2``) affordable.
    """
    if model.kind not in ("iid", "markov_chain"):
        raise ValueError(f"sparse sampling unsupported for kind {model.kind!r}")
    idx = np.asarray(indices, dtype=np.int64)
    if len(idx) == 0:
        return np.empty(0, dtype=np.int64)
    if np.any(np.diff(idx) <= 0):
        raise ValueError("indices must be strictly increasing")
    rng = _chain_rng(seed)
    n = len(idx)
    if model.kind == "iid":
        return rng.choice(model.n_states, size=n, p=model.stationary)
    u = rng.random(n).tolist()
    cutoff = _power_cutoff(model)
    gaps = np.diff(idx)
    # distinct short gaps get cached cumulative transition rows
    cum_cache: dict[int, list] = {}
    P = model.transition
    for g in np.unique(gaps[gaps < cutoff]):
        Pg = np.linalg.matrix_power(P, int(g))
        cum_cache[int(g)] = [list(np.cumsum(row)[:-1]) for row in Pg]
    cum_pi = list(np.cumsum(model.stationary)[:-1])
    out = np.empty(n, dtype=np.int64)
    s = bisect_right(cum_pi, u[0])
    out[0] = s
    gl = gaps.tolist()
    for m in range(1, n):
        g = gl[m - 1]
        if g >= cutoff:
            s = bisect_right(cum_pi, u[m])
        else:
            s = bisect_right(cum_cache[g][s], u[m])
        out[m] = s
    return out


# ---------------------------------------------------------------------------
# window laws


def pair_distribution(model: ProcessModel, lag: int) -> np.ndarray:
    """Joint law of the chain states at times ``(m, m+lag)``.

    Lag 0 returns the diagonal embedding of the stationary law.  Continuous
    kinds have no finite pair law; smeared observables are not functions of a
    single state, so the request is refused for them as well.
    """
    if model.kind not in ("iid", "markov_chain"):
        raise ValueError(
            f"pair law unsupported for kind {model.kind!r}: use empirical pair law"
        )
    if lag < 0:
        raise ValueError("lag must be nonnegative")
    pi = model.stationary
    if lag == 0:
        return np.diag(pi)
    Pl = np.linalg.matrix_power(model.transition, lag)
    return pi[:, None] * Pl


def conditional_expectation(model: ProcessModel, trajectory: Trajectory,
                            center: int, radius: int) -> float:
    """``E(X(center) | window of chain states within the given radius)``.

    The window is ``{max(0, center-radius), ..., center+radius}``.  For plain
    chain observables the value is measurable and returned as-is; for smeared
    observables the tail beyond the window is integrated against transition
    powers of the driving chain.
    """
    if not model.is_finite:
        raise ValueError("conditional expectation needs a finite-kind model")
    if trajectory.chain is None:
        raise ValueError("trajectory carries no chain states")
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    if center < 0 or center >= len(trajectory.values):
        raise ValueError("center outside the trajectory")
    if model.kind in ("iid", "markov_chain"):
        return float(trajectory.values[center])
    w = model.smear_weights
    J = len(w) - 1
    hi = center + radius
    if center + J >= len(trajectory.chain):
        raise ValueError("trajectory too short for the smear window")
    chain = trajectory.chain
    f = model.states
    total = 0.0
    known = min(J, radius)
    for j in range(known + 1):
        total += w[j] * f[chain[center + j]]
    if known < J:
        s = chain[hi]
        P = model.transition
        fut = f.copy()
        # walk transition powers outward from the window edge
        step = np.eye(model.n_states)
        last = 0
        for j in range(known + 1, J + 1):
            need = center + j - hi
            step = step @ np.linalg.matrix_power(P, need - last)
            last = need
            total += w[j] * float((step @ f)[s])
    return float(total)


def moment_table(model: ProcessModel, thetas: Sequence[float]) -> MomentTable:
    """Exact absolute moments of the stationary observable law."""
    th = np.asarray(thetas, dtype=np.float64)
    if np.any(th < 0):
        raise ValueError("moment orders must be nonnegative")
    if model.kind in ("iid", "markov_chain"):
        vals = np.abs(model.states)
        pi = model.stationary
        gam = np.array([float(np.sum(pi * vals ** t)) for t in th])
        return MomentTable(th, gam)
    if model.kind == "smeared_markov":
        gam = np.array([_smeared_abs_moment(model, t) for t in th])
        return MomentTable(th, gam)
    raise ValueError("moment table needs a finite-kind model")


def _smeared_abs_moment(model: ProcessModel, theta: float) -> float:
    """E|X|^theta for a smeared observable by window enumeration."""
    w = model.smear_weights
    J = len(w) - 1
    A = model.n_states
    if A ** (J + 1) > 2_000_000:
        raise ValueError("smear window too wide for exact enumeration")
    P = model.transition
    pi = model.stationary
    f = model.states
    acc = 0.0

    def rec(depth, s, p, v):
        nonlocal acc
        if depth == J:
            acc += p * abs(v) ** theta
            return
        for s2 in range(A):
            p2 = p * P[s, s2]
            if p2 > 0:
                rec(depth + 1, s2, p2, v + w[depth + 1] * f[s2])
    for s in range(A):
        rec(0, s, pi[s], w[0] * f[s])
    return acc


# ---------------------------------------------------------------------------
# binary trajectory export


def export_trajectory(trajectory: Trajectory, path) -> None:
    """Write values as little-endian float64 with a 16-byte header."""
    vals = np.ascontiguousarray(trajectory.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_TRAJ_MAGIC)
        fh.write(struct.pack("<II", _TRAJ_VERSION, len(vals)))
        fh.write(vals.tobytes())


def read_trajectory(path) -> np.ndarray:
    """Read back a binary trajectory written by :func:`export_trajectory`."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _TRAJ_MAGIC:
            raise ValueError("not a trajectory file (bad magic)")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _TRAJ_VERSION:
            raise ValueError(f"unsupported trajectory version {version}")
        data = np.frombuffer(fh.read(8 * count), dtype="<f8")
        if len(data) != count:
            raise ValueError("trajectory file truncated")
        return data.astype(np.float64)
