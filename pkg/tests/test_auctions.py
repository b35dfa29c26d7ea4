import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vmshare.auctions import (
    Bid,
    competitive_ratio_estimate,
    deviation_search,
    icat,
    opa,
    opa_revenue,
    opa_revenue_table,
    payoff,
    puff,
    split_users,
    trace_to_csv,
    truthful_bids,
)
from vmshare.model import BaseStation, User

from conftest import brute_station_revenue, make_users, random_users


def brute_opa(users, vms):
    """Best revenue over the candidate set of all valuations plus price 0."""
    return max([0.0] + [brute_station_revenue(users, u.valuation_u, vms) for u in users])


def test_opa_empty():
    out = opa([], 5)
    assert out.clearing_price == 0 and out.revenue == 0
    out = opa(truthful_bids(make_users([0.7])), 0)
    assert out.revenue == 0


def test_opa_three_bids():
    out = opa(truthful_bids(make_users([0.8, 0.5, 0.3])), 2)
    assert out.clearing_price == 0.5
    assert out.revenue == pytest.approx(1.0)
    assert out.winners == ((0, 1), (1, 1))


def test_opa_two_bids():
    out = opa(truthful_bids(make_users([0.9, 0.4], [2, 3])), 4)
    assert out.clearing_price == 0.9
    assert out.revenue == pytest.approx(1.8)
    assert out.winners == ((0, 2),)


def test_opa_tie_breaks_to_highest_price():
    # 0.6 * 1 == 0.3 * 2
    out = opa(truthful_bids(make_users([0.6, 0.3], [1, 1])), 2)
    assert out.clearing_price == 0.6


def test_opa_partial_fill():
    out = opa(truthful_bids(make_users([0.9, 0.8], [2, 3])), 4)
    assert out.clearing_price == 0.8
    assert out.winners == ((0, 2), (1, 2))
    assert out.units_sold == 4


@settings(max_examples=200)
@given(
    st.lists(st.tuples(st.integers(1, 3), st.floats(0, 1)), max_size=12),
    st.integers(0, 15),
)
def test_opa_matches_candidate_enumeration(pairs, vms):
    users = [User(i, r, u) for i, (r, u) in enumerate(pairs)]
    out = opa(truthful_bids(users), vms)
    assert out.revenue == brute_opa(users, vms)
    assert out.revenue == pytest.approx(out.clearing_price * out.units_sold)
    assert out.units_sold <= vms
    assert all(users[uid].valuation_u >= out.clearing_price for uid, _ in out.winners)


def test_opa_dense_sweep_never_beats(rng):
    grid = np.linspace(0, 1, 2001)
    for _ in range(50):
        users = random_users(rng)
        vms = int(rng.integers(1, 20))
        best = opa_revenue(users, vms)
        dense = max(brute_station_revenue(users, p, vms) for p in grid)
        assert dense <= best + 1e-12


def test_opa_revenue_table(rng):
    for _ in range(20):
        users = random_users(rng)
        st_ = BaseStation(0, tuple(users))
        table = opa_revenue_table(st_, 10)
        for v in range(11):
            assert table[v] == opa_revenue(users, v)


def test_bid_validation():
    with pytest.raises(ValueError):
        Bid(0, 0, 0.5)
    with pytest.raises(ValueError):
        Bid(0, 1, -0.1)


# -- icat ------------------------------------------------------------------


def test_icat_hand_trace():
    users = make_users([0.6, 0.5, 0.2])
    out = icat(users, 3, 1.0)
    assert [r.posted_price for r in out.rounds] == pytest.approx([1 / 3, 0.5])
    assert out.rounds[0].rejected_ids == (2,)
    assert out.rounds[1].rejected_ids == ()
    assert out.revenue == 1.0
    assert out.clearing_price == 0.5
    assert dict(out.winners) == {0: 1, 1: 1}
    assert opa_revenue(users, 3) == pytest.approx(1.0)


def test_icat_target_too_high():
    users = make_users([0.6, 0.5, 0.2])
    out = icat(users, 3, 2.0)
    assert out.revenue == 0 and out.clearing_price == 0
    assert out.winners == ()
    assert opa_revenue(users, 3) < 2.0


def test_icat_zero_target():
    users = make_users([0.6, 0.5, 0.2])
    out = icat(users, 3, 0.0)
    assert out.clearing_price == 0 and out.revenue == 0
    assert out.rounds[0].rejected_ids == ()
    assert out.units_sold == 3


def test_icat_degenerate():
    assert icat([], 3, 1.0).revenue == 0
    assert icat(make_users([0.9]), 0, 0.5).revenue == 0
    with pytest.raises(ValueError):
        icat(make_users([0.9]), 1, -1.0)


def test_icat_rejects_serially_until_fixed_point():
    # 4 units requested, 3 on offer: price 0.3 drops the 0.2 user, the other three still fill 3 VMs
    users = make_users([0.5, 0.4, 0.35, 0.2])
    out = icat(users, 3, 0.9)
    assert out.revenue == 0.9
    assert out.rounds[0].rejected_ids == (3,)


@settings(max_examples=300)
@given(
    st.lists(st.tuples(st.integers(1, 3), st.floats(0, 1)), min_size=2, max_size=10),
    st.integers(1, 12),
    st.floats(0, 3),
)
def test_icat_exact_extraction(pairs, vms, target):
    users = [User(i, r, u) for i, (r, u) in enumerate(pairs)]
    out = icat(users, vms, target)
    optimum = opa_revenue(users, vms)
    assert out.revenue in (0.0, target)
    assert (out.revenue == target) == (optimum >= target)
    prices = [r.posted_price for r in out.rounds]
    assert prices == sorted(prices)
    assert out.units_sold <= vms


def test_icat_exact_at_optimum_target(rng):
    # targets equal to the optimum itself are the sharp edge of the guarantee
    for _ in range(200):
        users = random_users(rng, n_lo=2)
        vms = int(rng.integers(1, 15))
        target = opa_revenue(users, vms)
        assert icat(users, vms, target).revenue == target


def test_trace_csv():
    out = icat(make_users([0.6, 0.5, 0.2]), 3, 1.0)
    lines = trace_to_csv(out).splitlines()
    assert lines[0] == "round,posted_price,num_active,rejected_ids"
    assert lines[1] == "0,0.3333333333333333,3,2"
    assert lines[2] == "1,0.5,2,"


# -- puff ------------------------------------------------------------------


def test_puff_empty():
    res = puff([], 5, seed=1)
    assert res.first.revenue == 0 and res.second.revenue == 0


def test_puff_forced_partition():
    users = make_users([0.8, 0.8, 0.3, 0.3])
    res = puff(users, 4, partition=([users[0], users[2]], [users[1], users[3]]))
    assert res.estimate_first == pytest.approx(0.8)
    assert res.estimate_second == pytest.approx(0.8)
    assert res.first.revenue == pytest.approx(0.8)
    assert res.second.revenue == pytest.approx(0.8)
    assert res.revenue == pytest.approx(1.6)
    assert res.vms == (4, 4)


def test_puff_splits_supply_when_demand_exceeds_it():
    users = make_users([0.9, 0.8, 0.7, 0.6, 0.5])
    res = puff(users, 3, seed=0)
    assert res.vms == (1, 2)


@pytest.mark.parametrize("seed", range(5))
def test_puff_split_sizes(seed):
    users = make_users([0.1, 0.2, 0.3, 0.4, 0.5])
    s1, s2 = split_users(users, seed)
    assert (len(s1), len(s2)) == (2, 3)
    assert sorted(u.id for u in s1 + s2) == [0, 1, 2, 3, 4]
    res = puff(users, 5, seed)
    assert tuple(len(p) for p in res.partition) == (2, 3)


def test_puff_single_user():
    res = puff(make_users([0.9]), 2, seed=3)
    assert res.revenue == 0


def test_puff_lower_bound(rng):
    for _ in range(300):
        users = random_users(rng, n_lo=0)
        vms = int(rng.integers(0, 15))
        res = puff(users, vms, seed=int(rng.integers(1 << 30)))
        assert res.revenue >= min(res.estimate_first, res.estimate_second)


def test_puff_deterministic_given_seed():
    users = make_users([0.1, 0.9, 0.5, 0.7, 0.3, 0.6])
    assert puff(users, 4, seed=12) == puff(users, 4, seed=12)


def test_competitive_ratio_estimate_runs():
    users = make_users([0.8, 0.8, 0.3, 0.3])
    mean, se = competitive_ratio_estimate(users, 4, 200, seed=1)
    assert 0 <= mean <= 1 and se >= 0


# -- deviations -------------------------------------------------------------


def test_payoff_sign_follows_decision():
    users = make_users([0.6, 0.5, 0.2])
    out = icat(users, 3, 1.0)
    assert payoff(users[0], out) == pytest.approx(0.1)
    assert payoff(users[1], out) == pytest.approx(0.0)
    assert payoff(users[2], out) == 0.0


def test_deviation_single_user():
    users = make_users([0.7])
    for target in (0.0, 0.3, 0.7, 0.9):
        assert deviation_search(users, 2, "icat", target).gain == 0.0


def test_deviation_icat_example():
    rep = deviation_search(make_users([0.6, 0.5, 0.2]), 3, "icat", 1.0)
    assert rep.gain <= 0
    assert rep.trials == 3 * 4


def test_deviation_puff_example():
    users = make_users([0.8, 0.8, 0.3, 0.3])
    rep = deviation_search(users, 4, "puff", partition=([users[0], users[2]], [users[1], users[3]]))
    assert rep.gain <= 0
    for seed in range(5):
        assert deviation_search(users, 4, "puff", seed=seed).gain <= 0


def test_deviation_detects_a_broken_mechanism():
    # accepting above value must show up as a loss, not a gain
    users = make_users([0.2, 0.9])
    honest = icat(users, 2, 0.8)
    forced = icat(users, 2, 0.8, {0: lambda price, m: True})
    assert payoff(users[0], forced) < payoff(users[0], honest)


def test_deviation_arguments():
    with pytest.raises(ValueError):
        deviation_search(make_users([0.5]), 1, "vcg")
    with pytest.raises(ValueError):
        deviation_search(make_users([0.5]), 1, "icat")


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.tuples(st.integers(1, 3), st.floats(0, 1)), min_size=1, max_size=6),
    st.integers(1, 6),
    st.floats(0, 2),
)
def test_icat_incentive_compatible(pairs, vms, target):
    users = [User(i, r, u) for i, (r, u) in enumerate(pairs)]
    assert deviation_search(users, vms, "icat", target).gain <= 0
