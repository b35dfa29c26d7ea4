"""Exhaustive ground truth and the comparison baselines.

Everything here enumerates the full placement space, so it is guarded by
the enumeration cap. Per-station revenue is tabulated once for every VM
count, after which each placement costs one lookup per station.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .auctions import opa, opa_revenue_table, truthful_bids
from .model import (
    DEFAULT_ENUMERATION_CAP,
    Placement,
    PriceVector,
    Scenario,
    enumerate_placements,
    network_revenue,
)


@dataclass(frozen=True)
class OracleResult:
    best_placement: Placement
    best_prices: PriceVector
    best_revenue: float


def placement_matrix(scenario: Scenario, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    placements = enumerate_placements(scenario, cap)
    return np.array(placements, dtype=int).reshape(len(placements), scenario.num_stations)


def _lookup(tables: list[np.ndarray], placements: np.ndarray) -> np.ndarray:
    total = np.zeros(len(placements))
    for k, table in enumerate(tables):
        total = total + table[placements[:, k]]
    return total


def placement_revenues(scenario: Scenario, cap: int = DEFAULT_ENUMERATION_CAP):
    """All placements (lexicographic) with their optimal ``opa`` revenue."""
    placements = placement_matrix(scenario, cap)
    tables = [opa_revenue_table(st, scenario.total_vms) for st in scenario.stations]
    return placements, _lookup(tables, placements)


def exhaustive_optimum(scenario: Scenario, cap: int = DEFAULT_ENUMERATION_CAP) -> OracleResult:
    placements, revenues = placement_revenues(scenario, cap)
    best = int(np.argmax(revenues))  # first maximiser = lexicographically smallest
    placement = tuple(int(x) for x in placements[best])
    prices = PriceVector(
        [opa(truthful_bids(st.users), v).clearing_price for st, v in zip(scenario.stations, placement)]
    )
    return OracleResult(placement, prices, network_revenue(scenario, placement, prices))


def _uniform_tables(scenario: Scenario, price: float) -> list[np.ndarray]:
    v = np.arange(scenario.total_vms + 1)
    tables = []
    for st in scenario.stations:
        demand = sum(u.demand_r for u in st.users if u.valuation_u >= price)
        tables.append(price * np.minimum(demand, v) if price > 0 else np.zeros(v.size))
    return tables


def uniform_price_baseline(
    scenario: Scenario, price: float, cooperative: bool, cap: int = DEFAULT_ENUMERATION_CAP
) -> float:
    """Network revenue when every station posts the same ``price``.

    Cooperative stations use the best placement for that price; non-cooperative
    ones are averaged over every placement.
    """
    if not 0.0 <= price <= 1.0:
        raise ValueError("price must lie in [0, 1]")
    revenues = _lookup(_uniform_tables(scenario, price), placement_matrix(scenario, cap))
    return float(revenues.max() if cooperative else revenues.mean())


def noncooperative_auction_baseline(scenario: Scenario, cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """Mean over all placements of the summed per-station ``opa`` revenue."""
    _, revenues = placement_revenues(scenario, cap)
    return float(revenues.mean())


def price_grid(step: float = 0.05) -> list[float]:
    n = int(round(1.0 / step))
    return [round(i * step, 10) for i in range(1, n + 1)]


def uniform_price_sweep(scenario: Scenario, prices, cap: int = DEFAULT_ENUMERATION_CAP) -> list[dict]:
    placements = placement_matrix(scenario, cap)
    rows = []
    for p in prices:
        revenues = _lookup(_uniform_tables(scenario, p), placements)
        rows.append({"price": p, "cooperative": float(revenues.max()), "noncooperative": float(revenues.mean())})
    return rows


def oracle_to_csv(scenario: Scenario, cap: int = DEFAULT_ENUMERATION_CAP) -> str:
    placements, revenues = placement_revenues(scenario, cap)
    top = revenues.max() if revenues.size else 0.0
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["placement", "revenue", "is_optimal"])
    for p, r in zip(placements, revenues):
        writer.writerow(["-".join(map(str, p)), repr(float(r)), int(r == top)])
    return buf.getvalue()
