import numpy as np
import pytest

from nonconv.models import (
    two_state_chain,
    rademacher_iid,
    iid_model,
    markov_model,
    smeared_model,
    build_process,
    sample_path,
    sample_at_indices,
    pair_distribution,
    moment_table,
)


def test_two_state_chain_stationary_symmetric():
    m = two_state_chain(0.3)
    assert m.kind == "markov_chain"
    np.testing.assert_allclose(m.stationary, [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(m.transition, [[0.7, 0.3], [0.3, 0.7]], atol=0)


def test_markov_model_rejects_bad_rows():
    with pytest.raises(ValueError):
        markov_model([-1.0, 1.0], [[0.7, 0.2], [0.3, 0.7]])
    with pytest.raises(ValueError):
        markov_model([-1.0, 1.0], [[0.7, 0.3, 0.0], [0.3, 0.7, 0.0]])


def test_pair_distribution_closed_form():
    # two-state symmetric chain: P(X0=a, Xn=b) = 1/4 (1 + ab 0.4^n) on {-1,1}
    m = two_state_chain(0.3)
    for n in (1, 2, 5):
        J = pair_distribution(m, n)
        lam = 0.4 ** n
        expect = 0.25 * np.array([[1 + lam, 1 - lam], [1 - lam, 1 + lam]])
        np.testing.assert_allclose(J, expect, atol=1e-13)


def test_pair_distribution_iid_is_product():
    m = iid_model([-1.0, 0.0, 2.0], [0.5, 0.25, 0.25])
    J = pair_distribution(m, 3)
    np.testing.assert_allclose(J, np.outer(m.stationary, m.stationary), atol=1e-15)


def test_sample_path_deterministic_and_marginal():
    m = two_state_chain(0.3)
    a = sample_path(m, 5000, seed=11)
    b = sample_path(m, 5000, seed=11)
    np.testing.assert_array_equal(a.values, b.values)
    assert set(np.unique(a.values)) <= {-1.0, 1.0}
    # mean of a long stationary stretch is near zero
    assert abs(np.mean(a.values)) < 0.1


def test_sample_at_indices_deterministic_state_indices():
    m = two_state_chain(0.3)
    idx = np.arange(0, 202, dtype=np.int64)
    a = sample_at_indices(m, idx, seed=5)
    b = sample_at_indices(m, idx, seed=5)
    np.testing.assert_array_equal(a, b)
    assert a.dtype == np.int64
    assert set(np.unique(a)) <= {0, 1}


def test_sample_at_indices_unit_gap_transition_frequency():
    # consecutive indices follow the one-step kernel: P(flip) = 0.3
    m = two_state_chain(0.3)
    idx = np.arange(0, 400_000, dtype=np.int64)
    x = sample_at_indices(m, idx, seed=12)
    flip = np.mean(x[1:] != x[:-1])
    assert abs(flip - 0.3) < 0.005


def test_sample_at_indices_rejects_unsorted():
    m = two_state_chain(0.3)
    with pytest.raises(ValueError, match="strictly increasing"):
        sample_at_indices(m, np.array([3, 1, 2], dtype=np.int64), seed=0)


def test_sample_at_indices_gap_transition_frequency():
    # gap-2 transitions: P(same sign) = 0.7^2 + 0.3^2 = 0.58
    m = two_state_chain(0.3)
    idx = np.arange(0, 400_000, 2, dtype=np.int64)
    x = sample_at_indices(m, idx, seed=7)
    same = np.mean(x[1:] == x[:-1])
    assert abs(same - 0.58) < 0.005


def test_rademacher_iid_moments():
    m = rademacher_iid()
    assert m.kind == "iid"
    tab = moment_table(m, [1.0, 2.0, 4.0])
    for th in (1.0, 2.0, 4.0):
        assert tab.gamma(th) == pytest.approx(1.0)


def test_smeared_model_carries_weights():
    base = two_state_chain(0.3)
    sm = smeared_model(base, [0.5, 0.25, 0.125, 0.125])
    assert sm.kind == "smeared_markov"
    assert sm.smear_weights.shape == (4,)
    assert sm.is_finite


def test_build_process_round_trip():
    spec = {"kind": "markov_chain", "states": [-1.0, 1.0],
            "transition": [[0.7, 0.3], [0.3, 0.7]]}
    m = build_process(spec)
    np.testing.assert_allclose(m.states, [-1.0, 1.0])
    with pytest.raises(ValueError):
        build_process({"kind": "no_such_kind"})
