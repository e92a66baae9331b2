import numpy as np
import pytest

from nonconv.blocks import build_schedule, realize_blocks
from nonconv.embedding import (
    DiscreteLaw,
    TwoPointEmbedding,
    BrownianWalk,
    ChainIncrementLaws,
    iid_product_law,
    CoupledIncrementLaws,
    walk_step,
    forward_embedded_sums,
    coupled_embedding_times,
)
from nonconv.models import two_state_chain, rademacher_iid
from nonconv.sums import (
    ObservableSpec,
    marginal_of,
    center_and_decompose,
    q_linear_family,
    q_linear_quadratic,
)


def _rng(seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def _decomp(model, f, ell, name):
    return center_and_decompose(ObservableSpec(f, ell=ell, name=name),
                                marginal_of(model))


# ---------------------------------------------------------------------------
# discrete laws and the two-point rule


def test_discrete_law_merges_lattice_atoms():
    law = DiscreteLaw.from_atoms([(0.5, 0.2), (0.5 + 1e-12, 0.3), (-0.5, 0.5)])
    np.testing.assert_allclose(law.values, [-0.5, 0.5])
    np.testing.assert_allclose(law.probs, [0.5, 0.5])
    assert law.mean() == pytest.approx(0.0, abs=1e-12)
    assert law.second_moment() == pytest.approx(0.25)
    assert law.variance() == pytest.approx(0.25)
    assert law.fourth_moment() == pytest.approx(0.0625)


def test_two_point_rejects_uncentred_law():
    law = DiscreteLaw(np.array([-1.0, 1.0]), np.array([0.25, 0.75]))
    with pytest.raises(ValueError, match="not centred"):
        TwoPointEmbedding(law)


def test_two_point_fair_sign_pair():
    law = DiscreteLaw(np.array([-1.0, 1.0]), np.array([0.5, 0.5]))
    emb = TwoPointEmbedding(law)
    assert emb.p_zero == 0.0
    assert emb.m_minus == pytest.approx(0.5)
    rng = _rng(0)
    for _ in range(10):
        assert emb.draw_pair(rng) == (-1.0, 1.0)


def test_two_point_asymmetric_law_exit_statistics():
    """{-1: 2/3, +2: 1/3} embeds through the single interval (-1, 2): exit
    side frequencies reproduce the law and the mean exit time is E X^2 = 2."""
    law = DiscreteLaw(np.array([-1.0, 2.0]), np.array([2.0 / 3.0, 1.0 / 3.0]))
    emb = TwoPointEmbedding(law)
    rng = _rng(1)
    walk = BrownianWalk(rng, step=2e-3)
    exits = np.empty(600)
    times = np.empty(600)
    for k in range(600):
        u, v = emb.draw_pair(rng)
        assert (u, v) == (-1.0, 2.0)
        tau, side = walk.run_exit(u, v)
        exits[k] = v if side == 1 else u
        times[k] = tau
    assert np.mean(exits == -1.0) == pytest.approx(2.0 / 3.0, abs=0.06)
    assert np.mean(times) == pytest.approx(2.0, rel=0.1)
    assert np.mean(exits) == pytest.approx(0.0, abs=0.15)


def test_two_point_atom_at_zero():
    law = DiscreteLaw(np.array([-1.0, 0.0, 1.0]), np.array([0.25, 0.5, 0.25]))
    emb = TwoPointEmbedding(law)
    assert emb.p_zero == pytest.approx(0.5)
    rng = _rng(2)
    nones = sum(emb.draw_pair(rng) is None for _ in range(2000))
    assert nones / 2000 == pytest.approx(0.5, abs=0.04)


def test_conditional_endpoint_law_is_exit_free():
    # {-2: 1/8, -1: 1/4, +1: 1/2, 0: 1/8}: given a positive exit, the unseen
    # endpoint is -2 or -1 with probability proportional to |u| mu(u) = 1/4 each
    law = DiscreteLaw(np.array([-2.0, -1.0, 0.0, 1.0]),
                      np.array([0.125, 0.25, 0.125, 0.5]))
    assert abs(law.mean()) < 1e-12
    emb = TwoPointEmbedding(law)
    rng = _rng(3)
    draws = np.array([emb.conditional_endpoint(rng, 1.0) for _ in range(4000)])
    assert np.mean(draws == -2.0) == pytest.approx(0.5, abs=0.03)
    assert np.mean(draws == -1.0) == pytest.approx(0.5, abs=0.03)


# ---------------------------------------------------------------------------
# the walk


def test_walk_symmetric_interval_statistics():
    rng = _rng(4)
    walk = BrownianWalk(rng, step=1e-3)
    taus = np.empty(500)
    sides = np.empty(500)
    for k in range(500):
        taus[k], sides[k] = walk.run_exit(-1.0, 1.0)
    # exit time of (-a, a) has mean a^2; sides are symmetric
    assert np.mean(taus) == pytest.approx(1.0, rel=0.08)
    assert np.mean(sides) == pytest.approx(0.0, abs=0.12)


def test_walk_query_positions_have_brownian_variance():
    rng = _rng(5)
    walk = BrownianWalk(rng, step=1e-3)
    vals = []
    while len(vals) < 400:
        _, _, q = walk.run_exit(-30.0, 30.0, query_offsets=[1.0])
        if not np.isnan(q[0]):
            vals.append(q[0])
    v = float(np.var(vals))
    assert 0.75 < v < 1.3


def test_walk_rejects_bad_interval():
    walk = BrownianWalk(_rng(0), step=1e-3)
    with pytest.raises(ValueError, match="straddle"):
        walk.run_exit(0.5, 1.0)
    with pytest.raises(ValueError, match="positive"):
        BrownianWalk(_rng(0), step=0.0)


def test_walk_step_scale():
    assert walk_step([1.0, 4.0, 9.0], factor=1e-3) == pytest.approx(4e-3)
    with pytest.raises(ValueError, match="variance"):
        walk_step([0.0, 0.0])


# ---------------------------------------------------------------------------
# exact increment laws


def _r_geometric(sched, c, s_val, m, lam=0.4):
    # E[sum of future big-block summands | state value s at cut c] for the
    # identity observable on the flip-0.3 chain
    acc = 0.0
    for j in range(m + 1, sched.j_max + 1):
        lo, hi = sched.big_range(j)
        if lam ** (lo - c) < 1e-18:
            break
        acc += s_val * (lam ** (lo - c) - lam ** (hi + 1 - c)) / (1 - lam)
    return acc


def test_chain_increment_law_matches_hand_enumeration():
    """Block 2 of the ell = 1 identity component, enumerated by hand: the
    stretch from cut 2 to cut 4 contains the single big summand x(3), and
    the tail-sum adjustment depends only on the state at the next cut."""
    model = two_state_chain(0.3)
    d = _decomp(model, lambda a: a, 1, "identity")
    sched = build_schedule(t_max=400)
    laws = ChainIncrementLaws(model, q_linear_family(1), d, sched)
    P = model.transition
    vals = model.states
    for s in (0, 1):
        expect: dict = {}
        r_prev = _r_geometric(sched, 2, vals[s], 1)
        for z3 in (0, 1):
            for z4 in (0, 1):
                p = P[s, z3] * P[z3, z4]
                v = vals[z3] + _r_geometric(sched, 4, vals[z4], 2) - r_prev
                key = round(v, 6)
                expect[key] = expect.get(key, 0.0) + p
        law = laws.law(2, s)
        got = {round(float(v), 6): float(p)
               for v, p in zip(law.values, law.probs)}
        assert set(got) == set(expect)
        for key in expect:
            assert got[key] == pytest.approx(expect[key], abs=1e-9)
        # martingale property: zero conditional mean from either start state
        assert law.marginal().mean() == pytest.approx(0.0, abs=1e-8)


def test_chain_increment_laws_centred_for_many_blocks():
    model = two_state_chain(0.3)
    d = _decomp(model, lambda a: a, 1, "identity")
    sched = build_schedule(t_max=400)
    laws = ChainIncrementLaws(model, q_linear_family(1), d, sched)
    for j in range(1, 7):
        for s in (0, 1):
            law = laws.law(j, s)
            assert abs(law.marginal().mean()) < 1e-8
            np.testing.assert_allclose(law.end_given_value.sum(axis=1), 1.0,
                                       atol=1e-12)


def test_chain_r_value_matches_geometric_oracle():
    model = two_state_chain(0.3)
    d = _decomp(model, lambda a: a, 1, "identity")
    sched = build_schedule(t_max=400)
    laws = ChainIncrementLaws(model, q_linear_family(1), d, sched)
    for m in (1, 2, 3):
        c = int(sched.b[m - 1]) + int(sched.r[m - 1])
        for s in (0, 1):
            oracle = _r_geometric(sched, c, float(model.states[s]), m)
            assert laws.r_value(m, s) == pytest.approx(oracle, abs=1e-9)


def test_iid_product_block_law_is_sign_convolution():
    model = rademacher_iid()
    d = _decomp(model, lambda a, b: a * b, 2, "pair_product")
    sched = build_schedule(t_max=400)
    # block 5 spans two summands; each contributes an independent fair sign
    lo, hi = sched.big_range(5)
    assert hi - lo + 1 == 2
    law = iid_product_law(model, d, sched, 5)
    np.testing.assert_allclose(law.values, [-2.0, 0.0, 2.0], atol=1e-9)
    np.testing.assert_allclose(law.probs, [0.25, 0.5, 0.25], atol=1e-12)
    assert law.variance() == pytest.approx(2.0)


def test_iid_product_law_rejects_chain_models():
    model = two_state_chain(0.3)
    d = _decomp(model, lambda a, b: a * b, 2, "pair_product")
    sched = build_schedule(t_max=400)
    with pytest.raises(ValueError, match="iid"):
        iid_product_law(model, d, sched, 2)


def test_coupled_laws_contain_realised_increments():
    model = two_state_chain(0.3)
    d = _decomp(model, lambda a, b: a * b + 0.5 * (a + b), 2, "canonical")
    sched = build_schedule(t_max=900)
    real = realize_blocks(model, q_linear_quadratic(), d, 2, sched, 900, seed=6)
    laws = CoupledIncrementLaws(model, q_linear_quadratic(), d, sched, real,
                                real.plan, real.states)
    for j in range(1, 6):
        law = laws.law(j)
        x = float(real.M[j - 1])
        assert float(np.min(np.abs(law.values - x))) < 1e-6
        assert abs(law.marginal().mean()) < 1e-8


# ---------------------------------------------------------------------------
# generation


def test_forward_embedded_sums_deterministic_and_consistent():
    model = two_state_chain(0.3)
    d = _decomp(model, lambda a: a, 1, "identity")
    sched = build_schedule(t_max=400)
    laws = ChainIncrementLaws(model, q_linear_family(1), d, sched)
    step = walk_step([laws.law(j, 0).marginal().variance()
                      for j in range(1, 6)], factor=1e-3)
    p1 = forward_embedded_sums(laws, 30, seed=9, step=step)
    p2 = forward_embedded_sums(laws, 30, seed=9, step=step)
    np.testing.assert_array_equal(p1.values, p2.values)
    np.testing.assert_array_equal(p1.taus, p2.taus)
    assert np.all(p1.taus >= 0.0)
    assert len(p1.partial_sums) == 30
    assert p1.states is not None and len(p1.states) == 31
    # each generated increment is an atom of its conditional law
    for j in range(1, 31):
        law = laws.law(j, int(p1.states[j - 1]))
        assert float(np.min(np.abs(law.values - p1.values[j - 1]))) < 1e-6


def test_coupled_embedding_times_reproduce_increments():
    model = two_state_chain(0.3)
    d = _decomp(model, lambda a: a, 1, "identity")
    sched = build_schedule(t_max=400)
    real = realize_blocks(model, q_linear_family(1), d, 1, sched, 400, seed=17)
    laws = ChainIncrementLaws(model, q_linear_family(1), d, sched)

    def law_for(j):
        return laws.law(j, int(real.cut_states[j - 1])).marginal()

    m = 12
    taus, tries = coupled_embedding_times(real.M[:m], law_for, seed=3,
                                          step=1e-3)
    assert np.all(taus >= 0.0)
    assert np.all(tries >= 0)
    t2, _ = coupled_embedding_times(real.M[:m], law_for, seed=3, step=1e-3)
    np.testing.assert_array_equal(taus, t2)
    # mean stopping time should sit at the scale of the increment variance
    active = np.abs(real.M[:m]) > 1e-7
    assert np.mean(taus[active]) == pytest.approx(
        float(np.mean(real.M[:m][active] ** 2)), rel=1.5)
