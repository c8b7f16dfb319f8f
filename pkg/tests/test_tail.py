from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import zeta

from lampwalk.construction import DESK
from lampwalk.group import IDENTITY, LAMPLIGHTER, GroupElement, mul
from lampwalk.sampler import BLUE, RED, Step, Trajectory, sample_trajectory
from lampwalk.tail import (
    Decomposer,
    ZeroProbabilityError,
    check_stabilization,
    decompose_w,
    detect_records,
    p_map,
    perturb_first,
    step_probability,
    t_chain,
    tau,
)

G = LAMPLIGHTER


@pytest.fixture(scope="module")
def dec(desk):
    levels, _ = desk
    return Decomposer(levels, G, DESK)


def core_element(lv, rng):
    """phi(b_n f) for a uniform f in F_n^-1."""
    f = lv.F.sample(rng)
    return mul(lv.b, G.inv(f))


def naive_decompositions(w, n, dec):
    """Every (q', q'') in Q x Q with q'^-1 w q''^-1 in b_n F_n^-1."""
    Q = dec.Q(n)
    return [(q1, q2) for q1 in Q for q2 in Q
            if dec.in_core(mul(mul(G.inv(q1), w), G.inv(q2)), n)]


# -- records -----------------------------------------------------------------


def test_records_example():
    recs = detect_records([3, 1, 5, 5, 2])
    assert [(r.time, r.value, r.simple) for r in recs] == [(1, 3, True), (3, 5, True),
                                                           (4, 5, False)]


def test_records_increasing_and_constant():
    assert all(r.simple for r in detect_records([1, 2, 3, 4]))
    assert len(detect_records([1, 2, 3, 4])) == 4
    assert [(r.time, r.simple) for r in detect_records([2, 2, 2])] == [
        (1, True), (2, False), (3, False)]


@given(st.lists(st.integers(1, 6), min_size=1, max_size=30))
def test_records_match_definition(ks):
    recs = {r.time: r.simple for r in detect_records(ks)}
    for i in range(1, len(ks) + 1):
        before = ks[:i - 1]
        assert (i in recs) == all(ks[i - 1] >= k for k in before)
        if i in recs:
            assert recs[i] == all(ks[i - 1] > k for k in before)


def test_records_need_data():
    with pytest.raises(ValueError):
        detect_records([])


# -- stabilization -----------------------------------------------------------


def stabilization_oracle(ks, ys, n):
    """Smallest i0 <= n satisfying both conditions on [i0, n], by direct search."""
    records = {r.time: r for r in detect_records(ks[:n], ys[:n])}
    for i0 in range(1, n + 1):
        ok = all(max(ks[:i]) > i for i in range(i0, n + 1))
        ok = ok and all(records[i].simple and records[i].y == BLUE
                        for i in range(i0, n + 1) if i in records)
        if ok:
            return i0
    return None


def test_stabilization_examples():
    assert check_stabilization(([5, 1, 2, 3], [BLUE] * 4), 4).i0 == 1
    rep = check_stabilization((list(range(1, 11)), [BLUE] * 10), 10)
    assert not rep.stabilized and rep.status == "not-stabilized-at-horizon"
    rep = check_stabilization(([10, 1, 12, 1], [BLUE, BLUE, RED, BLUE]), 4)
    assert rep.i0 == 4 and rep.status == "certified-at-horizon" and rep.certified_to == 4


@settings(max_examples=300)
@given(st.lists(st.tuples(st.integers(1, 40), st.sampled_from([RED, BLUE])),
                min_size=1, max_size=25))
def test_stabilization_matches_definition(steps):
    ks, ys = [k for k, _ in steps], [y for _, y in steps]
    n = len(ks)
    assert check_stabilization((ks, ys), n).i0 == stabilization_oracle(ks, ys, n)


def test_stabilization_horizon_bound():
    with pytest.raises(ValueError):
        check_stabilization(([3, 1], [BLUE, BLUE]), 3)


# -- decompositions ----------------------------------------------------------


def test_core_element_decomposes_trivially(desk, dec):
    import numpy as np

    levels, _ = desk
    nrng = np.random.default_rng(0)
    for _ in range(10):
        w = core_element(levels[0], nrng)
        d = dec.decompose(w, 1)
        assert (d.q1, d.core, d.q2) == (IDENTITY, w, IDENTITY)
    # higher up q'' need not be unique (only q' is); q' = e is still forced
    for n in (2, 3):
        w = core_element(levels[n - 1], nrng)
        d = dec.decompose(w, n)
        assert d.q1 == IDENTITY and mul(d.core, d.q2) == w


def test_identity_is_in_no_W(dec):
    for n in dec.feasible_levels:
        assert dec.decompose(IDENTITY, n) is None
    assert dec.p_map(IDENTITY) is None
    assert dec.t_chain(IDENTITY) == {}


def test_feasible_levels(dec):
    assert dec.feasible_levels == [1, 2, 3]


@pytest.mark.parametrize("n", [1, 2, 3])
def test_roundtrip_recovers_q1(desk, dec, n):
    import numpy as np

    levels, _ = desk
    Q = dec.Q(n)
    rng = np.random.default_rng(n)
    for _ in range(40 if n < 3 else 15):
        q1 = Q[int(rng.integers(len(Q)))]
        q2 = Q[int(rng.integers(len(Q)))]
        w = mul(mul(q1, core_element(levels[n - 1], rng)), q2)
        d = dec.decompose(w, n)
        assert d.q1 == q1
        assert mul(mul(d.q1, d.core), d.q2) == w
        assert dec.in_core(d.core, n) and dec.in_Q(d.q2, n)
        # p lands strictly lower, as in "p(w) ∈ W_m for some m < n"
        below = dec.p_map(d.q1)
        assert below is None or below.level < n


@pytest.mark.parametrize("n", [1, 2])
def test_indexed_search_matches_naive_pairs(desk, dec, n):
    import numpy as np

    levels, _ = desk
    Q = dec.Q(n)
    rng = np.random.default_rng(10 + n)
    for _ in range(30):
        q1 = Q[int(rng.integers(len(Q)))]
        q2 = Q[int(rng.integers(len(Q)))]
        for w in (mul(mul(q1, core_element(levels[n - 1], rng)), q2),
                  mul(q1, q2), GroupElement(int(rng.integers(-30, 30)), {0, 3})):
            pairs = naive_decompositions(w, n, dec)
            d = dec.decompose(w, n)
            if not pairs:
                assert d is None
            else:
                assert {p[0] for p in pairs} == {d.q1}
                assert d.q2 == min((p[1] for p in pairs), key=G.order_key)


def test_indexed_search_matches_naive_at_level_three(desk, dec):
    import numpy as np

    levels, _ = desk
    Q = dec.Q(3)
    rng = np.random.default_rng(33)
    for _ in range(2):
        q1, q2 = Q[int(rng.integers(len(Q)))], Q[int(rng.integers(len(Q)))]
        w = mul(mul(q1, core_element(levels[2], rng)), q2)
        pairs = naive_decompositions(w, 3, dec)
        assert {p[0] for p in pairs} == {dec.decompose(w, 3).q1}


def test_two_level_nest(desk, dec):
    import numpy as np

    levels, _ = desk
    rng = np.random.default_rng(4)
    inner = core_element(levels[0], rng)  # in W_1 and in A_2
    assert dec.in_Q(inner, 2)
    w = mul(inner, core_element(levels[1], rng))
    assert dec.p_map(w).q1 == inner
    assert dec.t_chain(w) == {1: inner}
    assert t_chain(w, levels, G, DESK) == {inner}
    assert p_map(w, levels, G, DESK) == inner
    assert decompose_w(w, 2, levels, G, DESK).q1 == inner


def test_chain_of_a_level_one_element_is_empty(desk, dec):
    import numpy as np

    levels, _ = desk
    w = core_element(levels[0], np.random.default_rng(5))
    assert dec.p_map(w).q1 == IDENTITY
    assert dec.t_chain(w) == {}


# -- tau ---------------------------------------------------------------------


def handmade(levels):
    """Records at times 1 (k = 3) and 3 (k = 4), both blue; i0 = 1."""
    import numpy as np

    rng = np.random.default_rng(8)
    x1 = core_element(levels[2], rng)
    x3 = core_element(levels[3], rng)
    return Trajectory((Step(3, BLUE, x1), Step(1, RED, IDENTITY), Step(4, BLUE, x3)))


def test_tau_handmade(desk, dec):
    levels, _ = desk
    t = handmade(levels)
    tv = tau(t, 3, G, dec)
    assert tv.i0 == 1
    assert tv.values() == {3: t.steps[0].x}
    entry = tv.entries[3]
    assert (entry.record_time, entry.previous_record) == (3, 1)
    assert entry.brute == "agree" and entry.confidence == "cross-checked"


def test_tau_without_later_records_is_empty(desk):
    levels, _ = desk
    t = handmade(levels)
    assert tau(t, 2, G).entries == {}
    t = Trajectory((Step(7, BLUE, None), Step(1, RED, IDENTITY)))
    assert tau(t, 2, G).entries == {}


def test_tau_unstabilized_is_empty():
    t = Trajectory(tuple(Step(1, RED, IDENTITY) for _ in range(5)))
    tv = tau(t, 5, G)
    assert tv.i0 is None and tv.entries == {}


def test_tau_on_samples(desk, dec):
    levels, _ = desk
    statuses = {}
    nonempty = 0
    for i in range(300):
        t = sample_trajectory(13, 100, levels, G, index=i)
        full = tau(t, 100, G, dec)
        part = tau(t, 50, G)
        statuses.update({s: statuses.get(s, 0) + 1 for s in
                         [e.brute for e in full.entries.values()]})
        # one entry per level, keyed by the level
        assert all(n == e.level for n, e in full.entries.items())
        if full.i0 is not None and part.i0 == full.i0:
            assert part.issubset(full)
        nonempty += bool(full.values())
    assert statuses.get("disagree", 0) == 0
    assert nonempty > 0


# -- perturbation ------------------------------------------------------------


def test_perturb_with_itself(desk):
    levels, _ = desk
    t = handmade(levels)
    same, ratio = perturb_first(t, t.steps[0], levels, G)
    assert same == t and ratio == 1


def test_perturb_ratio_against_pmf(desk):
    levels, _ = desk
    t = handmade(levels)
    c = zeta(1.25)
    new, ratio = perturb_first(t, Step(1, RED, IDENTITY), levels, G)
    p_old = 3 ** -1.25 / c * (1 - 1 / 8) / levels[2].F.size
    assert float(ratio) == pytest.approx((0.5 / c) / p_old, rel=1e-12)
    assert new.steps[1:] == t.steps[1:]


def test_step_probability_values(desk):
    levels, _ = desk
    c = zeta(1.25)
    assert float(step_probability(Step(1, RED, IDENTITY), levels, G)) == pytest.approx(0.5 / c)
    x = mul(levels[1].b, G.inv(levels[1].F.sample(__import__("numpy").random.default_rng(1))))
    expected = 2 ** -1.25 / c * 0.75 / levels[1].F.size
    assert float(step_probability(Step(2, BLUE, x), levels, G)) == pytest.approx(expected)
    assert step_probability(Step(1, RED, GroupElement(1)), levels, G) == 0
    assert isinstance(step_probability(Step(1, RED, IDENTITY), levels, G), Fraction)


def test_zero_probability_replacement_rejected(desk):
    levels, _ = desk
    with pytest.raises(ZeroProbabilityError):
        perturb_first(handmade(levels), Step(1, RED, GroupElement(5)), levels, G)
    with pytest.raises(ZeroProbabilityError):
        perturb_first(handmade(levels), Step(1, BLUE, GroupElement(0, {40})), levels, G)


def test_perturbation_keeps_stabilization(desk):
    # when a later record up to i0 dominates k_1, lowering the first step
    # leaves every running maximum and record on [i0, n] unchanged
    levels, _ = desk
    n = 60
    seen = 0
    for i in range(400):
        t = sample_trajectory(21, n, levels, G, index=i)
        rep = check_stabilization(t, n)
        if rep.i0 is None or not t.steps[0].resolved:
            continue
        if not any(2 <= r.time <= rep.i0 and r.value >= t.ks[0]
                   for r in detect_records(t.ks[:n])):
            continue
        seen += 1
        new, _ = perturb_first(t, Step(1, RED, IDENTITY), levels, G)
        again = check_stabilization(new, n)
        assert again.stabilized and again.i0 <= rep.i0
        assert [r for r in detect_records(new.ks, new.ys) if r.time >= rep.i0] == \
            [r for r in detect_records(t.ks, t.ys) if r.time >= rep.i0]
    assert seen > 0


def test_unresolved_original_step_has_no_ratio(desk):
    from lampwalk.sampler import UnresolvedStepError

    levels, _ = desk
    t = Trajectory((Step(9, BLUE, None), Step(1, RED, IDENTITY)))
    with pytest.raises(UnresolvedStepError):
        perturb_first(t, Step(1, RED, IDENTITY), levels, G)
