"""Index families, observable decomposition, and the sums themselves.

A sum here has the form ``Xi(t) = sum_{n <= t} [F(X(q_1(n)), ..., X(q_ell(n))) - Fbar]``
where the first ``k`` index maps are ``q_j(n) = j n`` and the remaining ones
grow faster (e.g. ``n^2``).  The observable ``F`` is split into ``ell``
components ``F_1 + ... + F_ell = F - Fbar`` where ``F_i`` depends on the
first ``i`` arguments only and integrates to zero in its last argument;
this is the decomposition on which the whole block/martingale construction
rests, so its algebraic identities are enforced exactly (finite alphabets)
or to declared quadrature accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from nonconv.models import ProcessModel, Trajectory

__all__ = [
    "QFamily",
    "q_linear_family",
    "q_linear_quadratic",
    "QFamilyCertificate",
    "validate_q_family",
    "ObservableSpec",
    "FiniteMarginal",
    "marginal_of",
    "Decomposition",
    "center_and_decompose",
    "monte_carlo_centering",
    "NonconvSumSeries",
    "evaluate_sums",
    "states_from_values",
    "component_values",
    "regularity_probe",
]


# ---------------------------------------------------------------------------
# index families


@dataclass(frozen=True)
class QFamily:
    """Index maps ``q_1 < q_2 < ... < q_ell`` on the positive integers.

    Maps ``q_j(n) = j n`` for ``j <= k``; beyond ``k`` each map is given by a
    declarative spec ``("power", coeff, degree)`` meaning ``coeff * n**degree``
    or a raw callable on int64 arrays.
    """

    ell: int
    k: int
    fast: tuple = ()

    def __post_init__(self):
        if self.ell < 1 or not 1 <= self.k <= self.ell:
            raise ValueError("need 1 <= k <= ell")
        if len(self.fast) != self.ell - self.k:
            raise ValueError("need one fast map per index beyond k")

    def index(self, i: int, n):
        """``q_i(n)`` for scalar or array ``n``."""
        if not 1 <= i <= self.ell:
            raise ValueError(f"component {i} outside 1..{self.ell}")
        n_arr = np.asarray(n, dtype=np.int64)
        if i <= self.k:
            out = i * n_arr
        else:
            spec = self.fast[i - self.k - 1]
            if callable(spec):
                out = np.asarray(spec(n_arr), dtype=np.int64)
            elif spec[0] == "power":
                _, coeff, degree = spec
                out = np.int64(coeff) * n_arr ** np.int64(degree)
            else:
                raise ValueError(f"unknown fast map spec {spec!r}")
        return out if np.ndim(n) else int(out)

    def max_index(self, horizon: int) -> int:
        return max(self.index(i, horizon) for i in range(1, self.ell + 1))


def q_linear_family(ell: int) -> QFamily:
    """All-linear family ``q_j(n) = j n`` (k = ell)."""
    return QFamily(ell=ell, k=ell)


def q_linear_quadratic() -> QFamily:
    """The canonical two-map family ``(n, n^2)``."""
    return QFamily(ell=2, k=1, fast=(("power", 1, 2),))


@dataclass(frozen=True)
class QFamilyCertificate:
    checks: tuple          # of (name, status, details)
    status: str
    horizon: int

    def failed(self):
        return [c for c in self.checks if c[1] == "FAIL"]


def validate_q_family(qf: QFamily, horizon: int = 1000,
                      growth_exponent: float = 1.0,
                      eps_grid: Sequence[float] = (0.1, 0.5)) -> QFamilyCertificate:
    """Certify the ordering/growth/separation properties of an index family.

    Checks, each over ``n <= horizon``:

    * strict increase of each map in ``n`` and strict ordering in ``i``,
    * gap growth of the fast maps: ``q_i(n+1) - q_i(n) >= n**growth_exponent``
      for ``2 <= n < horizon``,
    * divergence of ``q_{i+1}(ceil(eps n)) - q_i(n)`` for ``i >= k`` and each
      probe ``eps`` (heuristic: the last quarter of the probed range must be
      strictly increasing and dominate the first quarter).

    Divergence over an infinite range cannot be certified by finite
    enumeration; a PASS here means "monotone divergence over the probed
    range", which is the strongest finite statement available.
    """
    if horizon < 8:
        raise ValueError("horizon too small to probe anything")
    n = np.arange(1, horizon + 1, dtype=np.int64)
    checks = []

    tables = [qf.index(i, n) for i in range(1, qf.ell + 1)]
    ok = all(np.all(np.diff(tab) > 0) for tab in tables)
    checks.append(("strictly_increasing", "PASS" if ok else "FAIL", {}))

    ok = True
    detail: dict = {"ties": 0}
    for i in range(qf.ell - 1):
        # only strict inversions count; isolated ties like q1(1) = q2(1) = 1 or
        # q2(2) = q3(2) for (n, 2n, n^2) are boundary artifacts, not misorderings
        detail["ties"] += int(np.sum(tables[i][1:] == tables[i + 1][1:]))
        bad = np.nonzero(tables[i][1:] > tables[i + 1][1:])[0]
        if len(bad):
            ok = False
            detail.update({"i": i + 1, "n": int(n[1:][bad[0]])})
            break
    checks.append(("ordered_in_i", "PASS" if ok else "FAIL", detail))

    for i in range(qf.k + 1, qf.ell + 1):
        tab = tables[i - 1]
        gaps = np.diff(tab).astype(np.float64)
        nn = n[:-1].astype(np.float64)
        mask = nn >= 2
        bad = np.nonzero(gaps[mask] < nn[mask] ** growth_exponent - 1e-9)[0]
        detail = {}
        if len(bad):
            detail = {"n": int(nn[mask][bad[0]]), "gap": float(gaps[mask][bad[0]])}
        checks.append((f"gap_growth_q{i}", "FAIL" if len(bad) else "PASS", detail))

    for i in range(qf.k, qf.ell):
        for eps in eps_grid:
            scaled = np.maximum(1, np.ceil(eps * n).astype(np.int64))
            g = qf.index(i + 1, scaled).astype(np.float64) - tables[i - 1].astype(np.float64)
            # g saw-tooths on the ceil plateaus, so divergence is probed through
            # the running minimum over [n, horizon] at geometric checkpoints
            run_min = np.minimum.accumulate(g[::-1])[::-1]
            cps = [run_min[horizon * j // 8] for j in (2, 3, 4, 5, 6)]
            diverges = bool(
                all(a < b for a, b in zip(cps, cps[1:])) and g[-1] > 0 and run_min[-1] > 0
            )
            checks.append((
                f"separation_q{i}_q{i + 1}_eps{eps}",
                "PASS" if diverges else "FAIL",
                {"last_value": float(g[-1])},
            ))

    status = "FAIL" if any(c[1] == "FAIL" for c in checks) else "PASS"
    return QFamilyCertificate(tuple(checks), status, horizon)


# ---------------------------------------------------------------------------
# observables and their decomposition


@dataclass(frozen=True)
class ObservableSpec:
    """An observable ``F`` on ``ell`` real arguments with regularity constants.

    ``f`` must be vectorised: it receives ``ell`` broadcastable float arrays.
    ``growth_const`` (K), ``growth_order`` (polynomial order) and
    ``holder_exponent`` bound ``|F|`` and its Hoelder modulus; they are probe
    targets, not enforced preconditions.
    """

    f: Callable
    ell: int
    growth_const: float = 1.0
    growth_order: int = 1
    holder_exponent: float = 1.0
    name: str = "observable"

    def __call__(self, *args):
        if len(args) != self.ell:
            raise ValueError(f"{self.name} takes {self.ell} arguments")
        return self.f(*args)


@dataclass(frozen=True)
class FiniteMarginal:
    """A discrete one-coordinate law: support points and weights.

    Exact for finite alphabets; a quadrature rule for a continuous marginal
    uses the same container with ``exact=False`` and carries its declared
    accuracy in ``note``.
    """

    points: np.ndarray
    weights: np.ndarray
    exact: bool = True
    note: str = "finite alphabet"

    def __post_init__(self):
        if len(self.points) != len(self.weights):
            raise ValueError("points and weights differ in length")
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")


def marginal_of(model: ProcessModel) -> FiniteMarginal:
    """Stationary one-coordinate law of a plain chain model."""
    if model.kind not in ("iid", "markov_chain"):
        raise ValueError("marginal extraction needs a plain chain model")
    return FiniteMarginal(model.states.copy(), model.stationary.copy())


@dataclass(frozen=True)
class Decomposition:
    """Tabulated component split of a centred observable.

    ``tables[i-1]`` is the value table of component ``i`` on the marginal's
    support grid, shape ``(A,) * i``.  ``full_table`` tabulates ``F`` itself
    and ``mean`` is the centring constant, so that identically on the grid::

        sum_i tables[i-1] (broadcast) == full_table - mean
        tables[i-1] integrated against weights in its last axis == 0
    """

    spec: ObservableSpec
    marginal: FiniteMarginal
    tables: tuple
    full_table: np.ndarray
    mean: float

    @property
    def ell(self) -> int:
        return self.spec.ell

    def component_table(self, i: int) -> np.ndarray:
        if not 1 <= i <= self.ell:
            raise ValueError(f"component {i} outside 1..{self.ell}")
        return self.tables[i - 1]

    def centered_full(self) -> np.ndarray:
        return self.full_table - self.mean

    def verify(self) -> dict:
        """Max telescoping and centring residuals on the grid."""
        acc = np.zeros_like(self.full_table)
        for i in range(1, self.ell + 1):
            shape = self.tables[i - 1].shape + (1,) * (self.ell - i)
            acc = acc + self.tables[i - 1].reshape(shape)
        tele = float(np.max(np.abs(acc - self.centered_full())))
        w = self.marginal.weights
        centering = max(
            float(np.max(np.abs(np.tensordot(self.tables[i - 1], w, axes=([-1], [0])))))
            for i in range(1, self.ell + 1)
        )
        return {"telescoping": tele, "centering": centering}


_GRID_BUDGET = 20_000_000


def center_and_decompose(spec: ObservableSpec, marginal: FiniteMarginal) -> Decomposition:
    """Centre ``F`` and split it into per-argument-count components.

    With ``G_i = int F dmu^(ell-i)`` (trailing arguments integrated out) the
    components are ``F_i = G_i - G_{i-1}``, ``G_0 = Fbar``, ``G_ell = F``;
    they telescope to ``F - Fbar`` and each integrates to zero in its last
    argument.  Everything is tabulated on the support grid, so for an exact
    marginal the identities hold to rounding error.

    Grids beyond the budget (``A**ell`` points) are refused; use
    :func:`monte_carlo_centering` for the centring constant in that regime.
    """
    A = len(marginal.points)
    if A ** spec.ell > _GRID_BUDGET:
        raise ValueError(
            f"decomposition grid {A}**{spec.ell} exceeds the tabulation budget; "
            "use monte_carlo_centering for the mean"
        )
    axes_points = [
        marginal.points.reshape((1,) * u + (A,) + (1,) * (spec.ell - u - 1))
        for u in range(spec.ell)
    ]
    full = np.asarray(spec.f(*axes_points), dtype=np.float64)
    full = np.broadcast_to(full, (A,) * spec.ell).copy()
    w = marginal.weights
    partials = [full]
    g = full
    for _ in range(spec.ell):
        g = np.tensordot(g, w, axes=([-1], [0]))
        partials.append(g)
    partials.reverse()  # partials[i] = G_i with shape (A,)*i
    mean = float(partials[0])
    tables = []
    for i in range(1, spec.ell + 1):
        prev = partials[i - 1] if i > 1 else mean
        tables.append(partials[i] - (prev[..., None] if i > 1 else prev))
    return Decomposition(spec, marginal, tuple(tables), full, mean)


def monte_carlo_centering(spec: ObservableSpec, marginal: FiniteMarginal,
                          n_samples: int, seed: int) -> tuple:
    """Monte Carlo estimate of the centring constant with its standard error."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    draws = rng.choice(marginal.points, size=(n_samples, spec.ell), p=marginal.weights)
    vals = np.asarray(spec.f(*[draws[:, u] for u in range(spec.ell)]), dtype=np.float64)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_samples))


# ---------------------------------------------------------------------------
# evaluating the sums


def states_from_values(values: np.ndarray, marginal: FiniteMarginal) -> np.ndarray:
    """Map observable values back to support indices (exact matches only)."""
    pts = marginal.points
    idx = np.searchsorted(np.sort(pts), values)
    order = np.argsort(pts)
    idx = np.clip(idx, 0, len(pts) - 1)
    cand = order[idx]
    if not np.allclose(pts[cand], values, atol=1e-9):
        raise ValueError("trajectory values do not lie on the marginal support")
    return cand


@dataclass(frozen=True)
class NonconvSumSeries:
    """Cumulative component and total sums up to a horizon.

    ``component_paths[i-1][t]`` is the component-``i`` sum over ``n <= t``;
    index 0 is the empty sum.  ``total_path`` accumulates the directly
    evaluated centred observable, so ``sum_i component - total`` is a pure
    rounding diagnostic.
    """

    horizon: int
    component_paths: tuple
    total_path: np.ndarray
    model_id: str = ""

    @property
    def ell(self) -> int:
        return len(self.component_paths)

    def component(self, i: int) -> np.ndarray:
        return self.component_paths[i - 1]

    def identity_residual(self) -> float:
        acc = sum(self.component_paths)
        return float(np.max(np.abs(acc - self.total_path)))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            heads = ",".join(f"component_{i}" for i in range(1, self.ell + 1))
            fh.write(f"t,total,{heads}\n")
            for t in range(self.horizon + 1):
                row = ",".join(repr(float(c[t])) for c in self.component_paths)
                fh.write(f"{t},{repr(float(self.total_path[t]))},{row}\n")


def component_values(decomp: Decomposition, qf: QFamily,
                     states: np.ndarray, horizon: int, i: int,
                     index_of: Optional[dict] = None) -> np.ndarray:
    """Per-summand component values ``Y_i(n)`` for ``n = 1..horizon``.

    ``states`` holds chain state indices; ``index_of`` optionally maps
    absolute time indices to positions in ``states`` (sparse storage), the
    default being identity (dense storage from time 0).
    """
    n = np.arange(1, horizon + 1, dtype=np.int64)
    gathered = []
    for u in range(1, i + 1):
        t_idx = qf.index(u, n)
        if index_of is None:
            pos = t_idx
        else:
            pos = np.array([index_of[int(v)] for v in t_idx], dtype=np.int64)
        gathered.append(states[pos])
    return decomp.component_table(i)[tuple(gathered)]


def evaluate_sums(trajectory: Trajectory, qf: QFamily, decomp: Decomposition,
                  horizon: int) -> NonconvSumSeries:
    """Cumulative sums of all components along one trajectory.

    The trajectory must cover index ``max_i q_i(horizon)``; otherwise the
    required length is reported.  Values must lie on the decomposition's
    marginal support (chain-driven or manually constructed paths).
    """
    needed = qf.max_index(horizon)
    if len(trajectory.values) <= needed:
        raise ValueError(
            f"trajectory too short: need at least {needed + 1} values "
            f"(q_ell({horizon}) = {needed}), got {len(trajectory.values)}"
        )
    if trajectory.chain is not None and len(trajectory.chain) >= len(trajectory.values):
        states = np.asarray(trajectory.chain[: len(trajectory.values)], dtype=np.int64)
        # chain states are only usable if they index the marginal support
        if not np.allclose(decomp.marginal.points[states], trajectory.values, atol=1e-9):
            states = states_from_values(trajectory.values, decomp.marginal)
    else:
        states = states_from_values(trajectory.values, decomp.marginal)

    comp_paths = []
    for i in range(1, decomp.ell + 1):
        y = component_values(decomp, qf, states, horizon, i)
        path = np.concatenate([[0.0], np.cumsum(y)])
        comp_paths.append(path)
    n = np.arange(1, horizon + 1, dtype=np.int64)
    full_idx = tuple(states[qf.index(u, n)] for u in range(1, decomp.ell + 1))
    y_tot = decomp.centered_full()[full_idx]
    total = np.concatenate([[0.0], np.cumsum(y_tot)])
    return NonconvSumSeries(horizon, tuple(comp_paths), total, trajectory.model_id)


# ---------------------------------------------------------------------------
# regularity probe


def regularity_probe(spec: ObservableSpec, n_samples: int = 2000, seed: int = 0,
                     box: float = 1.0) -> dict:
    """Sampled check of the declared growth and Hoelder bounds.

    Draws argument tuples uniformly in ``[-box, box]^ell`` plus pairs at
    geometrically shrinking separations down to 1e-9 (so jump
    discontinuities reveal themselves as exploding quotients).  Returns the
    worst observed quotients and a PASS/FAIL verdict at quotient <= 1.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    ell = spec.ell
    K, iota, kappa = spec.growth_const, spec.growth_order, spec.holder_exponent
    x = rng.uniform(-box, box, size=(n_samples, ell))
    y = rng.uniform(-box, box, size=(n_samples, ell))
    scales = 10.0 ** rng.uniform(-9, 0, size=(n_samples, 1))
    y_near = x + scales * rng.uniform(-1, 1, size=(n_samples, ell))
    # ensure some near pairs straddle the axes where jumps like sign() live
    straddle = x.copy()
    straddle[:, 0] = scales[:, 0] * 0.5
    y_straddle = straddle.copy()
    y_straddle[:, 0] = -scales[:, 0] * 0.5

    def fvals(pts):
        return np.asarray(spec.f(*[pts[:, u] for u in range(ell)]), dtype=np.float64)

    growth_q = np.abs(fvals(x)) / (K * (1.0 + np.sum(np.abs(x) ** iota, axis=1)))
    worst_growth = float(growth_q.max())

    def holder_q(a, b):
        num = np.abs(fvals(a) - fvals(b))
        env = K * (1.0 + np.sum(np.abs(a) ** iota, axis=1) + np.sum(np.abs(b) ** iota, axis=1))
        dist = np.sum(np.abs(a - b) ** kappa, axis=1)
        keep = dist > 0
        return num[keep] / (env[keep] * dist[keep])

    quots = np.concatenate([holder_q(x, y), holder_q(x, y_near), holder_q(straddle, y_straddle)])
    worst_holder = float(quots.max()) if len(quots) else 0.0
    ok = worst_growth <= 1.0 + 1e-9 and worst_holder <= 1.0 + 1e-9
    return {
        "worst_growth_quotient": worst_growth,
        "worst_holder_quotient": worst_holder,
        "status": "PASS" if ok else "FAIL",
        "n_samples": n_samples,
    }
