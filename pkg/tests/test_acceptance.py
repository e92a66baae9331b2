"""Acceptance suite: one test per release criterion.

Each test emits a single ``acceptance k (<name>): PASS|FAIL`` line — echoed
in the terminal summary via conftest — and then asserts the criterion's
stated tolerances plus its runtime budget.  Base seed 3 throughout, except
the determinism check which runs the pipeline at seed 7.
"""

import itertools
import math
import time

import numpy as np
import pytest

import conftest

from nonconv.config import SCHEMA_VERSION, canonical_config, parse_config
from nonconv.harness import (
    component_sums,
    forward_vs_direct,
    run_clt,
    run_lil,
    run_martingale_check,
    run_pipeline,
    run_strong_approx,
)
from nonconv.mixing import coefficient, interpolation_bounds, varpi
from nonconv.models import rademacher_iid, two_state_chain
from nonconv.sums import (
    FiniteMarginal,
    ObservableSpec,
    center_and_decompose,
    marginal_of,
    q_linear_family,
    q_linear_quadratic,
)
from nonconv.variance import limiting_variance

SEED = 3


def _announce(k: int, name: str, ok: bool) -> None:
    line = f"acceptance {k} ({name}): {'PASS' if ok else 'FAIL'}"
    print(line)
    conftest.ACCEPTANCE_LINES.append(line)


def _chain_linear_cfg(**run):
    base = {"horizon": 10_000, "replicates": 100, "seed": SEED}
    base.update(run)
    return parse_config({
        "schema_version": SCHEMA_VERSION,
        "model": {"kind": "markov_chain", "states": [-1.0, 1.0],
                  "transition": [[0.7, 0.3], [0.3, 0.7]]},
        "observable": {"name": "identity"},
        "q_family": {"ell": 1, "k": 1, "fast": []},
        "run": base,
    })


def _iid_product_cfg(**run):
    base = {"horizon": 10_000, "replicates": 100, "seed": SEED}
    base.update(run)
    return parse_config({
        "schema_version": SCHEMA_VERSION,
        "model": {"kind": "iid", "states": [-1.0, 1.0], "probs": [0.5, 0.5]},
        "observable": {"name": "product"},
        "q_family": {"ell": 2, "k": 1, "fast": [{"degree": 2}]},
        "run": base,
    })


# ---------------------------------------------------------------------------
# 1. decomposition exactness


def test_acceptance_1_decomposition_exactness():
    t0 = time.monotonic()
    rng = np.random.default_rng(SEED)
    worst_tele = 0.0
    worst_cent = 0.0
    for _ in range(50):
        A = int(rng.integers(2, 5))
        ell = int(rng.integers(1, 4))
        pts = np.sort(rng.normal(size=A))
        w = rng.dirichlet(np.ones(A))
        table = rng.normal(size=(A,) * ell)

        def f(*xs, _table=table, _pts=pts):
            return _table[tuple(np.searchsorted(_pts, x) for x in xs)]

        spec = ObservableSpec(f, ell=ell, name="random_table")
        decomp = center_and_decompose(spec, FiniteMarginal(pts, w))

        # independent exhaustive enumeration over the full grid
        mean = 0.0
        for idx in itertools.product(range(A), repeat=ell):
            mean += table[idx] * float(np.prod(w[list(idx)]))
        for idx in itertools.product(range(A), repeat=ell):
            parts = sum(decomp.tables[i - 1][idx[:i]] for i in range(1, ell + 1))
            worst_tele = max(worst_tele, abs(parts - (table[idx] - mean)))
        for i in range(1, ell + 1):
            for prefix in itertools.product(range(A), repeat=i - 1):
                s = sum(w[a] * decomp.tables[i - 1][prefix + (a,)]
                        for a in range(A))
                worst_cent = max(worst_cent, abs(s))
    elapsed = time.monotonic() - t0
    ok = worst_tele <= 1e-12 and worst_cent <= 1e-12 and elapsed < 10.0
    _announce(1, "decomposition exactness", ok)
    assert worst_tele <= 1e-12
    assert worst_cent <= 1e-12
    assert elapsed < 10.0


# ---------------------------------------------------------------------------
# 2. mixing coefficients against a brute-force oracle


def _max_correlation_oracle(model, n, rng, tries=300):
    """Brute-force maximal correlation of (X(0), X(n)).

    The exact value on a two-point alphabet: every non-constant function is
    affine in the state, so the supremum is |corr| of the states themselves.
    A random-function scan certifies the supremum from below as well.
    """
    P = np.linalg.matrix_power(model.transition, n)
    pi = model.stationary
    J = pi[:, None] * P                       # joint law of (X0, Xn)
    s = model.states

    def corr(f, g):
        mf = f @ J.sum(axis=1)
        mg = g @ J.sum(axis=0)
        vf = (f - mf) ** 2 @ J.sum(axis=1)
        vg = (g - mg) ** 2 @ J.sum(axis=0)
        if vf <= 0 or vg <= 0:
            return 0.0
        cov = (f - mf) @ J @ (g - mg)
        return abs(cov) / math.sqrt(vf * vg)

    exact = corr(s, s)
    best_scan = max(corr(rng.normal(size=2), rng.normal(size=2))
                    for _ in range(tries))
    assert best_scan <= exact + 1e-9
    return exact


def test_acceptance_2_mixing_oracle_and_inequalities():
    t0 = time.monotonic()
    model = two_state_chain(0.3)
    rng = np.random.default_rng(SEED)
    tol = 1e-10

    rho_ok = True
    for n in range(1, 9):
        rho = coefficient(model, n, "rho")
        rho_ok &= abs(rho - 0.4 ** n) <= tol
        rho_ok &= abs(rho - _max_correlation_oracle(model, n, rng)) <= tol

    order_ok = True
    prev = {k: math.inf for k in ("alpha", "rho", "phi", "psi")}
    for n in range(1, 9):
        vals = {k: coefficient(model, n, k) for k in ("alpha", "rho", "phi", "psi")}
        order_ok &= 4.0 * vals["alpha"] <= vals["psi"] + tol
        order_ok &= 2.0 * vals["phi"] <= vals["psi"] + tol
        for k in vals:                        # separations only weaken dependence
            order_ok &= vals[k] <= prev[k] + tol
        prev = vals

    interp_ok = True
    corner_pairs = [(math.inf, 1), (2, 2), (math.inf, math.inf)]
    probe_pairs = corner_pairs + [(4, 2), (math.inf, 2), (8, 4), (2, 1)]
    for n in range(1, 9):
        a, r, ph = (coefficient(model, n, k) for k in ("alpha", "rho", "phi"))
        for q, p in probe_pairs:
            bound = interpolation_bounds(a, r, ph, q, p)
            interp_ok &= bound <= 2.0 + tol
            if (q, p) in corner_pairs:
                interp_ok &= varpi(model, n, q, p) <= bound + tol
        # the fourth corner norm has no interpolation form; it caps the rest
        interp_ok &= varpi(model, n, 1, math.inf) <= \
            coefficient(model, n, "psi") + tol

    elapsed = time.monotonic() - t0
    ok = rho_ok and order_ok and interp_ok and elapsed < 30.0
    _announce(2, "mixing oracle and inequalities", ok)
    assert rho_ok
    assert order_ok
    assert interp_ok
    assert elapsed < 30.0


# ---------------------------------------------------------------------------
# 3. limiting variances, exact and empirical


def test_acceptance_3_variance_oracles():
    t0 = time.monotonic()
    chain = two_state_chain(0.3)
    d1 = center_and_decompose(
        ObservableSpec(lambda a: a, ell=1, name="identity"), marginal_of(chain))
    r1 = limiting_variance(chain, d1, 1, q_linear_family(1))

    # independent oracle: fundamental-matrix long-run variance
    P, pi, fv = chain.transition, chain.stationary, chain.states
    Z = np.linalg.inv(np.eye(2) - P + np.outer(np.ones(2), pi))
    fc = fv - pi @ fv
    oracle = pi @ (fc * fc) + 2.0 * (pi * fc) @ (Z - np.eye(2)) @ fc

    iid = rademacher_iid()
    d2 = center_and_decompose(
        ObservableSpec(lambda a, b: a * b, ell=2, name="product"),
        marginal_of(iid))
    r2 = limiting_variance(iid, d2, 2, q_linear_quadratic())

    N = 10_000
    s_chain = component_sums(_chain_linear_cfg(horizon=N, replicates=2000))
    v_chain = float(np.var(s_chain[:, 0])) / N
    s_iid = component_sums(_iid_product_cfg(horizon=N, replicates=2000))
    v_iid = float(np.var(s_iid[:, 1])) / N

    elapsed = time.monotonic() - t0
    checks = {
        "chain value": abs(r1.value - 7.0 / 3.0) <= 1e-10,
        "chain oracle": abs(r1.value - oracle) <= 1e-10,
        "chain tail": r1.tail_bound < 1e-8,
        "iid exact": abs(r2.value - 1.0) <= 1e-12,
        "chain empirical": abs(v_chain - 7.0 / 3.0) / (7.0 / 3.0) < 0.05,
        "iid empirical": abs(v_iid - 1.0) < 0.05,
        "time": elapsed < 300.0,
    }
    _announce(3, "variance oracles", all(checks.values()))
    for name, passed in checks.items():
        assert passed, name


# ---------------------------------------------------------------------------
# 4. martingale property of the block differences


def test_acceptance_4_martingale_property():
    t0 = time.monotonic()
    runs = [
        (canonical_config(run={"seed": SEED}), 1),
        (canonical_config(run={"seed": SEED}), 2),
        (_iid_product_cfg(), 2),
    ]
    results = [run_martingale_check(cfg, component=c, t=2_000,
                                    n_checkpoints=10, replicates=2_000)
               for cfg, c in runs]
    elapsed = time.monotonic() - t0
    ok = (all(r["verdict"] == "PASS" for r in results)
          and all(r["worst_z"] <= 4.0 for r in results)
          and all(r["identity_residual_max"] <= 1e-10 for r in results)
          and elapsed < 600.0)
    _announce(4, "martingale property", ok)
    for r in results:
        assert r["worst_z"] <= 4.0          # 4/sqrt(R) rule, standardized
        assert r["identity_residual_max"] <= 1e-10
        assert r["verdict"] == "PASS"
    assert elapsed < 600.0


# ---------------------------------------------------------------------------
# 5. embedding fidelity


def test_acceptance_5_embedding_fidelity():
    t0 = time.monotonic()
    out_iid = forward_vs_direct(_iid_product_cfg(), component=2,
                                m_checkpoints=(100, 1000), replicates=800)
    out_chain = forward_vs_direct(canonical_config(run={"seed": SEED}),
                                  component=1, m_checkpoints=(100, 1000),
                                  replicates=800)
    elapsed = time.monotonic() - t0
    ok = elapsed < 600.0
    for out in (out_iid, out_chain):
        for m in (100, 1000):
            ok &= out["tests"][f"m_{m}"]["p_value"] > 0.01
        ok &= abs(out["clock_ratio"] - 1.0) < 0.03
        ok &= out["verdict"] == "PASS"
    _announce(5, "embedding fidelity", ok)
    for label, out in (("iid", out_iid), ("chain", out_chain)):
        for m in (100, 1000):
            assert out["tests"][f"m_{m}"]["p_value"] > 0.01, (label, m)
        assert abs(out["clock_ratio"] - 1.0) < 0.03, label
        assert out["verdict"] == "PASS", label
    assert elapsed < 600.0


# ---------------------------------------------------------------------------
# 6. approximation-error envelope exponents and the clock LLN


def test_acceptance_6_rate_exponents():
    t0 = time.monotonic()
    tight = (0.05, 0.49, 0.02)
    out_iid = run_strong_approx(_iid_product_cfg(), component=2,
                                t_max=100_000, replicates=100,
                                blocks=tight, lln_tol=0.05)
    out_chain = run_strong_approx(_chain_linear_cfg(), component=1,
                                  t_max=100_000, replicates=20,
                                  blocks=tight, lln_tol=0.05)
    elapsed = time.monotonic() - t0
    ok = elapsed < 1800.0
    for out in (out_iid, out_chain):
        for key in ("envelope_block", "envelope_brownian"):
            ok &= out[key]["exponent"] < 0.5
            ok &= out[key]["ci_high"] < 0.5
        ok &= out["clock_lln"]["ratio_at_horizon"] < 0.05
        ok &= out["verdict"] == "PASS"
    _announce(6, "rate exponents and clock LLN", ok)
    for label, out in (("iid", out_iid), ("chain", out_chain)):
        for key in ("envelope_block", "envelope_brownian"):
            assert out[key]["exponent"] < 0.5, (label, key)
            assert out[key]["ci_high"] < 0.5, (label, key)
        assert out["clock_lln"]["ratio_at_horizon"] < 0.05, label
        assert out["identity_ok"], label
        assert out["verdict"] == "PASS", label
    assert elapsed < 1800.0


# ---------------------------------------------------------------------------
# 7. central limit behaviour of the component sums


def test_acceptance_7_clt():
    t0 = time.monotonic()
    out = run_clt(canonical_config(run={"seed": SEED}), replicates=2_000)
    elapsed = time.monotonic() - t0
    ok = out["verdict"] == "PASS" and elapsed < 300.0
    _announce(7, "component CLT", ok)
    assert out["n"] == 10_000
    for name, t in out["tests"].items():
        assert t["kind"] == "ks", name
        assert t["p_value"] > out["bonferroni_alpha"], name
    assert out["verdict"] == "PASS"
    assert elapsed < 300.0


# ---------------------------------------------------------------------------
# 8. iterated-logarithm envelope


def test_acceptance_8_lil_envelope():
    t0 = time.monotonic()
    cfg = canonical_config(run={"horizon": 1_000_000, "replicates": 20,
                                "seed": SEED})
    out = run_lil(cfg)
    elapsed = time.monotonic() - t0
    comps = [c for c in out["components"].values() if c["kind"] == "envelope"]
    ok = (len(comps) == 2
          and all(c["in_band"] >= 18 for c in comps)
          and out["verdict"] == "PASS"
          and elapsed < 1200.0)
    _announce(8, "iterated-logarithm envelope", ok)
    assert out["band"] == [0.5, 1.5]
    for c in comps:
        assert c["in_band"] >= 18
        assert c["verdict"] == "PASS"
    assert out["verdict"] == "PASS"
    assert elapsed < 1200.0


# ---------------------------------------------------------------------------
# 9. determinism of the full pipeline


def test_acceptance_9_pipeline_determinism(tmp_path):
    cfg = canonical_config(run={"horizon": 2_000, "replicates": 5, "seed": 7})
    dir_a = tmp_path / "a"
    dir_b = tmp_path / "b"
    rep_a = run_pipeline(cfg, dir_a)
    rep_b = run_pipeline(cfg, dir_b)
    names = ["report.json", "summary.txt", "blocks_errors.csv",
             "coupling.csv", "embedding_trace.csv"]
    identical = all((dir_a / n).read_bytes() == (dir_b / n).read_bytes()
                    for n in names)
    ok = identical and rep_a == rep_b and rep_a["overall"] != "FAIL"
    _announce(9, "pipeline determinism", ok)
    for n in names:
        assert (dir_a / n).read_bytes() == (dir_b / n).read_bytes(), n
    assert rep_a == rep_b
    assert rep_a["overall"] != "FAIL"
