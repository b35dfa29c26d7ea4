"""Markov-approximation placement engine.

Placements are states of a time-reversible CTMC. Moving one VM between two
stations happens at rate ``exp(beta/2 * (phi_to - phi_from))`` where ``phi``
is the optimal per-placement revenue, so the chain's stationary law is the
softmax ``exp(beta*phi) / Z`` over all placements.

Simulation follows the round structure of the distributed algorithm: each
round picks a base station uniformly at random and races exponential clocks
for the placements where that station gains or loses one VM. Rounds occur at
rate ``Q_max(v)``, the largest per-station total rate at the current state,
and a station whose own total ``Q_k`` is smaller leaves the round empty with
probability ``1 - Q_k/Q_max``. This thinning gives every (station, target)
proposal the exact rate ``q/K``; a single VM move is proposable from both of
the stations it touches, so edges run at ``2q/K`` and the stationary law is
unchanged. Without thinning, the time spent per round would depend on which
station was picked and the occupancy would drift away from the softmax.
"""
from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import log_softmax

from .auctions import opa, opa_revenue_table, puff, truthful_bids
from .model import (
    DEFAULT_ENUMERATION_CAP,
    Placement,
    PriceVector,
    Scenario,
    balanced_placement,
    enumerate_placements,
)


@dataclass(frozen=True)
class ChainState:
    placement: Placement
    revenue_phi: float
    prices: PriceVector


class TruthfulOPA:
    """Per-placement revenue from ``opa`` at every station, with truthful bids."""

    name = "opa"

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self._tables = [opa_revenue_table(st, scenario.total_vms) for st in scenario.stations]

    def phi(self, placement: Placement) -> float:
        return float(sum(t[v] for t, v in zip(self._tables, placement)))

    def state(self, placement: Placement) -> ChainState:
        prices, total = [], 0.0
        for st, v in zip(self.scenario.stations, placement):
            out = opa(truthful_bids(st.users), v)
            prices.append(out.clearing_price)
            total += out.revenue
        return ChainState(tuple(placement), total, PriceVector(prices))


class PuffEvaluator:
    """Per-placement revenue from ``puff`` at every station.

    The partition drawn at a station depends only on ``seed``, the placement
    and the station index, so re-evaluating a placement reproduces the same
    revenue and caching is transparent.
    """

    name = "puff"

    def __init__(self, scenario: Scenario, seed: int = 0):
        self.scenario = scenario
        self.seed = seed

    def _outcomes(self, placement: Placement):
        for k, (st, v) in enumerate(zip(self.scenario.stations, placement)):
            rng = np.random.default_rng([self.seed, k, *placement])
            yield puff(list(st.users), v, rng)

    def phi(self, placement: Placement) -> float:
        return float(sum(o.revenue for o in self._outcomes(placement)))

    def state(self, placement: Placement) -> ChainState:
        prices, total = [], 0.0
        for o in self._outcomes(placement):
            units = o.first.units_sold + o.second.units_sold
            # average price paid per unit across the two halves
            prices.append(o.revenue / units if units else 0.0)
            total += o.revenue
        return ChainState(tuple(placement), total, PriceVector(prices))


def make_evaluator(scenario: Scenario, kind: str = "opa", seed: int = 0):
    if kind == "opa":
        return TruthfulOPA(scenario)
    if kind == "puff":
        return PuffEvaluator(scenario, seed)
    raise ValueError(f"unknown evaluator {kind!r}; expected 'opa' or 'puff'")


def evaluate_state(scenario: Scenario, placement: Sequence[int], evaluator="opa") -> ChainState:
    placement = scenario.validate_placement(placement)
    if isinstance(evaluator, str):
        evaluator = make_evaluator(scenario, evaluator)
    return evaluator.state(placement)


def neighbors(placement: Sequence[int], k: int) -> list[Placement]:
    """Placements reachable by moving one VM into or out of station ``k``."""
    v = tuple(placement)
    if not 0 <= k < len(v):
        raise IndexError(f"station {k} out of range")
    out = set()
    for j in range(len(v)):
        if j == k:
            continue
        if v[k] > 0:
            w = list(v)
            w[k] -= 1
            w[j] += 1
            out.add(tuple(w))
        if v[j] > 0:
            w = list(v)
            w[j] -= 1
            w[k] += 1
            out.add(tuple(w))
    return sorted(out)


def all_neighbors(placement: Sequence[int]) -> list[Placement]:
    seen = set()
    for k in range(len(placement)):
        seen.update(neighbors(placement, k))
    return sorted(seen)


def transition_rate(phi_from: float, phi_to: float, beta: float) -> float:
    if beta <= 0:
        raise ValueError("beta must be positive")
    return math.exp(0.5 * beta * (phi_to - phi_from))


@dataclass(frozen=True)
class TraceRecord:
    placement: Placement
    holding_time: float
    revenue_phi: float


@dataclass(frozen=True)
class ChainTrace:
    records: tuple[TraceRecord, ...]
    beta: float
    seed: int
    rounds: int = 0  # station-selection rounds including empty ones

    def __len__(self):
        return len(self.records)

    @property
    def revenues(self) -> np.ndarray:
        return np.array([r.revenue_phi for r in self.records])

    @property
    def holding_times(self) -> np.ndarray:
        return np.array([r.holding_time for r in self.records])


class _StateCache:
    """Per-placement revenue and per-station proposal tables."""

    def __init__(self, evaluator, beta: float, memoize: bool = True):
        self.evaluator = evaluator
        self.beta = beta
        self.memoize = memoize
        self._phi: dict[Placement, float] = {}
        self._moves: dict[Placement, tuple] = {}

    def phi(self, v: Placement) -> float:
        if not self.memoize:
            return self.evaluator.phi(v)
        if v not in self._phi:
            self._phi[v] = self.evaluator.phi(v)
        return self._phi[v]

    def moves(self, v: Placement):
        """``(per-station [(target, cumulative rate)], per-station total, max total)``."""
        if self.memoize and v in self._moves:
            return self._moves[v]
        here = self.phi(v)
        per_station, totals = [], []
        for k in range(len(v)):
            acc, entries = 0.0, []
            for w in neighbors(v, k):
                acc += transition_rate(here, self.phi(w), self.beta)
                entries.append((w, acc))
            per_station.append(entries)
            totals.append(acc)
        result = (per_station, totals, max(totals) if totals else 0.0)
        if self.memoize:
            self._moves[v] = result
        return result


def simulate(
    scenario: Scenario,
    beta: float,
    evaluator="opa",
    initial: Sequence[int] | None = None,
    max_jumps: int | None = None,
    max_time: float | None = None,
    seed: int = 0,
    memoize: bool = True,
) -> ChainTrace:
    """Run the placement chain until a jump budget or a time horizon is hit.

    Each record is a visited placement with the time spent there before the
    next jump. An absorbing placement (no moves possible) ends the run with
    an infinite holding time, or with the remaining horizon if ``max_time``
    is set. Deterministic for a given ``seed``.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if max_jumps is None and max_time is None:
        raise ValueError("need a stop rule: max_jumps or max_time")
    if isinstance(evaluator, str):
        evaluator = make_evaluator(scenario, evaluator, seed)
    K = scenario.num_stations
    v = scenario.validate_placement(
        initial if initial is not None else balanced_placement(K, scenario.total_vms)
    )
    jump_limit = math.inf if max_jumps is None else max_jumps
    time_limit = math.inf if max_time is None else max_time
    if jump_limit <= 0 or time_limit <= 0:
        return ChainTrace((), beta, seed)

    rng = np.random.default_rng(seed)
    cache = _StateCache(evaluator, beta, memoize)
    records = []
    now, rounds = 0.0, 0
    while len(records) < jump_limit:
        per_station, totals, q_max = cache.moves(v)
        phi_v = cache.phi(v)
        if q_max == 0.0:
            hold = time_limit - now if max_time is not None else math.inf
            records.append(TraceRecord(v, hold, phi_v))
            break
        hold = 0.0
        target = None
        while target is None:
            rounds += 1
            hold += rng.exponential(1.0 / q_max)
            k = int(rng.integers(K))
            draw = rng.random() * q_max
            if draw < totals[k]:
                for w, cum in per_station[k]:
                    if draw < cum:
                        target = w
                        break
                else:  # rounding at the top of the cumulative table
                    target = per_station[k][-1][0]
            if now + hold >= time_limit:
                break
        if now + hold >= time_limit:
            records.append(TraceRecord(v, time_limit - now, phi_v))
            break
        records.append(TraceRecord(v, hold, phi_v))
        now += hold
        v = target
    return ChainTrace(tuple(records), beta, seed, rounds)


@dataclass(frozen=True)
class StationaryDistribution:
    support: tuple[Placement, ...]
    probabilities: np.ndarray
    phis: np.ndarray

    def as_dict(self) -> dict[Placement, float]:
        return dict(zip(self.support, self.probabilities.tolist()))

    def expected_revenue(self) -> float:
        return float(self.probabilities @ self.phis)


def placement_phis(scenario: Scenario, evaluator="opa", cap: int = DEFAULT_ENUMERATION_CAP):
    support = enumerate_placements(scenario, cap)
    if isinstance(evaluator, str):
        evaluator = make_evaluator(scenario, evaluator)
    return support, np.array([evaluator.phi(v) for v in support])


def softmax_distribution(support, phis, beta: float) -> StationaryDistribution:
    phis = np.asarray(phis, dtype=float)
    probs = np.exp(log_softmax(beta * phis))
    return StationaryDistribution(tuple(support), probs, phis)


def stationary_distribution(
    scenario: Scenario, beta: float, evaluator="opa", cap: int = DEFAULT_ENUMERATION_CAP
) -> StationaryDistribution:
    if beta <= 0:
        raise ValueError("beta must be positive")
    support, phis = placement_phis(scenario, evaluator, cap)
    return softmax_distribution(support, phis, beta)


def logsumexp_bound_check(phis: Sequence[float], beta: float) -> tuple[bool, bool, float]:
    """Check ``max <= (1/beta) log sum exp(beta*phi) <= max + log(n)/beta``.

    Returns ``(lower_ok, upper_ok, approximation)``.
    """
    phis = np.asarray(phis, dtype=float)
    if phis.size == 0:
        raise ValueError("need at least one value")
    if beta <= 0:
        raise ValueError("beta must be positive")
    top = float(phis.max())
    # shifted form: a single value comes back unchanged, equal values give top + log(n)/beta
    approx = top + math.log(float(np.exp(beta * (phis - top)).sum())) / beta
    upper = top + math.log(phis.size) / beta
    return approx >= top, approx <= upper, approx


@dataclass(frozen=True)
class TraceStatistics:
    running_mean: np.ndarray
    occupancy: dict[Placement, float]
    time_average: float


def trace_statistics(trace: ChainTrace, window: int = 30, burn_in: int = 0) -> TraceStatistics:
    """Trailing-window revenue average per jump and hold-time-weighted occupancy.

    The running mean covers full windows only, so a window equal to the
    trace length gives one value, the plain mean. ``burn_in`` drops leading
    records from the occupancy and the time average.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    revenue = trace.revenues
    if revenue.size >= window:
        running = np.convolve(revenue, np.ones(window) / window, mode="valid")
    else:
        running = np.array([])
    kept = trace.records[burn_in:]
    holds = np.array([r.holding_time for r in kept])
    if holds.size and np.isinf(holds).any():
        # an absorbing state eventually holds all the mass
        holds = np.isinf(holds).astype(float)
    occupancy: dict[Placement, float] = {}
    total = holds.sum() if holds.size else 0.0
    for rec, h in zip(kept, holds):
        occupancy[rec.placement] = occupancy.get(rec.placement, 0.0) + h
    if total > 0:
        occupancy = {p: w / total for p, w in sorted(occupancy.items())}
        avg = float(sum(r.revenue_phi * h for r, h in zip(kept, holds)) / total)
    else:
        avg = math.nan
    return TraceStatistics(running, occupancy, avg)


def batch_means(trace: ChainTrace, burn_in: int = 0, batches: int = 20) -> tuple[float, float]:
    """Hold-weighted mean revenue and its standard error from batch means."""
    kept = trace.records[burn_in:]
    holds = np.array([r.holding_time for r in kept])
    revs = np.array([r.revenue_phi for r in kept])
    if holds.size < batches:
        raise ValueError("trace too short for batch means")
    means = []
    for idx in np.array_split(np.arange(holds.size), batches):
        h = holds[idx]
        means.append(float((revs[idx] * h).sum() / h.sum()))
    overall = float((revs * holds).sum() / holds.sum())
    se = float(np.std(means, ddof=1) / math.sqrt(batches))
    return overall, se


def occupancy_vector(trace: ChainTrace, support: Sequence[Placement], burn_in: int = 0) -> np.ndarray:
    occ = trace_statistics(trace, 1, burn_in).occupancy
    return np.array([occ.get(tuple(p), 0.0) for p in support])


def is_irreducible(scenario: Scenario, cap: int = DEFAULT_ENUMERATION_CAP) -> bool:
    states = enumerate_placements(scenario, cap)
    start = states[0]
    seen = {start}
    queue = deque([start])
    while queue:
        v = queue.popleft()
        for w in all_neighbors(v):
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return len(seen) == len(states)


def trace_to_csv(trace: ChainTrace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["jump_index", "sim_time", "holding_time", "placement", "revenue"])
    now = 0.0
    for i, rec in enumerate(trace.records):
        writer.writerow([i, repr(now), repr(rec.holding_time), "-".join(map(str, rec.placement)), repr(rec.revenue_phi)])
        now += rec.holding_time
    return buf.getvalue()


def stationary_to_csv(dist: StationaryDistribution) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["placement", "probability", "phi"])
    for p, prob, phi in zip(dist.support, dist.probabilities, dist.phis):
        writer.writerow(["-".join(map(str, p)), repr(float(prob)), repr(float(phi))])
    return buf.getvalue()
