"""Single-station pricing mechanisms.

``opa`` clears at the revenue-maximising bid assuming truthful bids.
``icat`` is a posted-price profit extractor: given a target revenue it posts
``R / min(active demand, vm_count)`` and drops users who refuse until the
survivors all accept. ``puff`` splits the users in two, estimates each half's
optimal revenue with ``opa`` and feeds it to ``icat`` on the other half, so no
user's report influences the target it faces.

Acceptance inside ``icat`` is decided by ``valuation * m >= R`` (``m`` being
the units on offer) instead of ``valuation >= R / m``. The two agree over the
reals; the product form agrees bit-for-bit with the revenue ``opa`` computes,
which keeps the profit-extraction guarantee exact in floating point.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .model import BaseStation, User

# accept(posted_price, units_on_offer) -> bool
Strategy = Callable[[float, int], bool]


@dataclass(frozen=True)
class Bid:
    user_id: int
    demand_r: int
    bid_b: float

    def __post_init__(self):
        if self.demand_r < 1:
            raise ValueError("demand must be >= 1")
        if not 0.0 <= self.bid_b <= 1.0:
            raise ValueError("bid must lie in [0, 1]")


@dataclass(frozen=True)
class Round:
    posted_price: float
    num_active: int
    rejected_ids: tuple[int, ...]


@dataclass(frozen=True)
class AuctionOutcome:
    clearing_price: float = 0.0
    revenue: float = 0.0
    winners: tuple[tuple[int, int], ...] = ()
    rounds: tuple[Round, ...] = ()

    @property
    def units_sold(self) -> int:
        return sum(units for _, units in self.winners)

    def units_for(self, user_id: int) -> int:
        for uid, units in self.winners:
            if uid == user_id:
                return units
        return 0


@dataclass(frozen=True)
class PuffOutcome:
    first: AuctionOutcome
    second: AuctionOutcome
    estimate_first: float  # R1, optimal revenue of the first half
    estimate_second: float  # R2
    partition: tuple[tuple[int, ...], tuple[int, ...]]
    vms: tuple[int, int] = field(default=(0, 0))

    @property
    def revenue(self) -> float:
        return self.first.revenue + self.second.revenue


def truthful_bids(users: Iterable[User]) -> list[Bid]:
    return [Bid(u.id, u.demand_r, u.valuation_u) for u in users]


def _fill(order: Sequence[tuple[int, int]], capacity: int) -> tuple[tuple[int, int], ...]:
    """Serve requests in order until capacity runs out; the last one may be partial."""
    winners = []
    left = capacity
    for uid, r in order:
        if left <= 0:
            break
        take = min(r, left)
        winners.append((uid, take))
        left -= take
    return tuple(winners)


def opa(bids: Sequence[Bid], vm_count: int) -> AuctionOutcome:
    """Optimal single-price auction over truthful bids.

    Every distinct bid is tried as the price; the best one wins, ties going
    to the highest price. Winners are filled by descending bid.
    """
    if not bids or vm_count <= 0:
        return AuctionOutcome()
    ordered = sorted(bids, key=lambda b: (-b.bid_b, b.user_id))
    best_price, best_rev = 0.0, 0.0
    demand = 0
    for i, b in enumerate(ordered):
        demand += b.demand_r
        # only evaluate once all bids equal to this price are counted
        if i + 1 < len(ordered) and ordered[i + 1].bid_b == b.bid_b:
            continue
        rev = b.bid_b * min(demand, vm_count)
        if rev > best_rev:
            best_price, best_rev = b.bid_b, rev
    if best_rev <= 0:
        return AuctionOutcome()
    served = [(b.user_id, b.demand_r) for b in ordered if b.bid_b >= best_price]
    return AuctionOutcome(best_price, best_rev, _fill(served, vm_count))


def opa_revenue(users: Sequence[User], vm_count: int) -> float:
    return opa(truthful_bids(users), vm_count).revenue


def opa_revenue_table(station: BaseStation, max_vms: int) -> np.ndarray:
    """``opa`` revenue at this station for every VM count ``0..max_vms``."""
    table = np.zeros(max_vms + 1)
    if not station.users or max_vms == 0:
        return table
    vals = np.array(sorted({u.valuation_u for u in station.users}, reverse=True))
    demand = np.array([sum(u.demand_r for u in station.users if u.valuation_u >= p) for p in vals])
    v = np.arange(max_vms + 1)
    rev = vals[:, None] * np.minimum(demand[:, None], v[None, :])
    return rev.max(axis=0)


def icat(
    users: Sequence[User],
    vm_count: int,
    target: float,
    strategies: Mapping[int, Strategy] | None = None,
) -> AuctionOutcome:
    """Posted-price profit extraction for a target revenue.

    ``strategies`` overrides the accept/reject rule for selected users; all
    others respond truthfully. Every round in which users drop out is
    batched: all refusers at the current price leave together.
    """
    target = float(target)
    if target < 0:
        raise ValueError("target revenue must be non-negative")
    strategies = strategies or {}
    active = list(users)
    if vm_count <= 0 or not active:
        return AuctionOutcome()

    rounds = []
    while active:
        m = min(sum(u.demand_r for u in active), vm_count)
        price = target / m
        rejected = []
        for u in active:
            respond = strategies.get(u.id)
            accepts = respond(price, m) if respond else u.valuation_u * m >= target
            if not accepts:
                rejected.append(u.id)
        rounds.append(Round(price, len(active), tuple(rejected)))
        if not rejected:
            winners = _fill([(u.id, u.demand_r) for u in active], vm_count)
            return AuctionOutcome(price, target, winners, tuple(rounds))
        gone = set(rejected)
        active = [u for u in active if u.id not in gone]
    return AuctionOutcome(rounds=tuple(rounds))


def split_users(users: Sequence[User], seed=None) -> tuple[list[User], list[User]]:
    """Uniform random halves with sizes floor(n/2) and ceil(n/2)."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(users))
    half = len(users) // 2
    first = sorted(perm[:half])
    second = sorted(perm[half:])
    return [users[i] for i in first], [users[i] for i in second]


def puff(
    users: Sequence[User],
    vm_count: int,
    seed=None,
    partition: tuple[Sequence[User], Sequence[User]] | None = None,
    strategies: Mapping[int, Strategy] | None = None,
    reports: Mapping[int, float] | None = None,
) -> PuffOutcome:
    """Partition users and run ``icat`` on each half with the other half's estimate.

    ``partition`` forces the split instead of drawing it from ``seed``.
    ``reports`` replaces the valuations some users report for the revenue
    estimates; it never touches the auction those users take part in.
    """
    s1, s2 = partition if partition is not None else split_users(users, seed)
    s1, s2 = list(s1), list(s2)
    reports = reports or {}

    def reported(group):
        return [Bid(u.id, u.demand_r, reports.get(u.id, u.valuation_u)) for u in group]

    total_demand = sum(u.demand_r for u in s1) + sum(u.demand_r for u in s2)
    if total_demand > vm_count:
        v1, v2 = vm_count // 2, vm_count - vm_count // 2
    else:
        v1 = v2 = vm_count
    r1 = opa(reported(s1), v1).revenue
    r2 = opa(reported(s2), v2).revenue
    first = icat(s1, v1, r2, strategies)
    second = icat(s2, v2, r1, strategies)
    ids = (tuple(u.id for u in s1), tuple(u.id for u in s2))
    return PuffOutcome(first, second, r1, r2, ids, (v1, v2))


@dataclass(frozen=True)
class DeviationReport:
    gain: float
    user_id: int | None = None
    strategy: str = "truthful"
    trials: int = 0


def payoff(user: User, outcome: AuctionOutcome) -> float:
    """Quasi-linear payoff of ``user``, written as ``units * (u*m - R) / m``.

    Using the same ``u*m`` product as the acceptance rule keeps the sign of
    the payoff consistent with the decision that produced it.
    """
    units = outcome.units_for(user.id)
    if units == 0:
        return 0.0
    m = outcome.units_sold
    return units * (user.valuation_u * m - outcome.revenue) / m


def _threshold(min_units: int) -> Strategy:
    # accept iff posted price <= R / min_units, i.e. iff m >= min_units
    return lambda price, m: m >= min_units


def deviation_search(
    users: Sequence[User],
    vm_count: int,
    mechanism: str = "icat",
    target: float | None = None,
    seed=None,
    partition=None,
) -> DeviationReport:
    """Largest payoff gain any single user gets from a threshold deviation.

    A threshold strategy accepts a posted price iff it is at most ``R / m0``,
    equivalently iff the units on offer ``m`` are at least ``m0``. Sweeping
    ``m0`` over ``1..vm_count + 1`` covers every distinct threshold behaviour,
    including reject-all. For ``puff`` the deviant may also misreport its
    valuation in the revenue estimates. Others always play truthfully.
    """
    users = list(users)
    if mechanism not in ("icat", "puff"):
        raise ValueError(f"unknown mechanism {mechanism!r}")
    if mechanism == "icat" and target is None:
        raise ValueError("icat deviation search needs a target revenue")

    def run(strategies=None, reports=None):
        if mechanism == "icat":
            out = icat(users, vm_count, target, strategies)
            return lambda uid: out
        res = puff(users, vm_count, seed, partition, strategies, reports)
        side = {uid: res.first for uid in res.partition[0]}
        side.update({uid: res.second for uid in res.partition[1]})
        return lambda uid: side[uid]

    truthful = run()
    best = DeviationReport(gain=0.0, trials=0)
    trials = 0
    report_options = [None] if mechanism == "icat" else [None, 0.0, 1.0]
    for user in users:
        honest = payoff(user, truthful(user.id))
        for m0 in range(1, vm_count + 2):
            for rep in report_options:
                reports = None if rep is None else {user.id: rep}
                outcome = run({user.id: _threshold(m0)}, reports)(user.id)
                gain = payoff(user, outcome) - honest
                trials += 1
                if gain > best.gain or best.user_id is None:
                    label = f"accept iff units>={m0}" + ("" if rep is None else f", report {rep}")
                    best = DeviationReport(gain, user.id, label, 0)
    return DeviationReport(best.gain, best.user_id, best.strategy, trials)


def trace_to_csv(outcome: AuctionOutcome) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["round", "posted_price", "num_active", "rejected_ids"])
    for i, rnd in enumerate(outcome.rounds):
        writer.writerow([i, repr(rnd.posted_price), rnd.num_active, "-".join(map(str, rnd.rejected_ids))])
    return buf.getvalue()


def competitive_ratio_estimate(users: Sequence[User], vm_count: int, trials: int, seed=0) -> tuple[float, float]:
    """Monte-Carlo mean and standard error of puff revenue over opa revenue."""
    optimum = opa_revenue(users, vm_count)
    if optimum <= 0:
        return math.nan, 0.0
    children = np.random.SeedSequence(seed).spawn(trials)
    ratios = np.array([puff(users, vm_count, np.random.default_rng(c)).revenue / optimum for c in children])
    return float(ratios.mean()), float(ratios.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
