"""Problem instances: base stations, users, placements and the revenue objective.

A scenario is a fixed set of base stations, each with its own users, plus a
network-wide budget of VMs. A placement assigns the budget to stations; a
price vector fixes one posted price per station. Revenue at a station is
``price * min(demand at that price, VMs at the station)``, where a user
demands its full request whenever its valuation is at least the price.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

#: Largest placement space the exhaustive routines will enumerate.
DEFAULT_ENUMERATION_CAP = 10**6


class EnumerationTooLarge(RuntimeError):
    """Raised when a placement space exceeds the enumeration cap."""

    def __init__(self, size: int, cap: int):
        super().__init__(f"placement space has {size} states, cap is {cap}")
        self.size = size
        self.cap = cap


@dataclass(frozen=True)
class User:
    id: int
    demand_r: int
    valuation_u: float

    def __post_init__(self):
        if self.demand_r < 1:
            raise ValueError(f"user {self.id}: demand must be >= 1, got {self.demand_r}")
        if not 0.0 <= self.valuation_u <= 1.0:
            raise ValueError(f"user {self.id}: valuation must lie in [0, 1], got {self.valuation_u}")


@dataclass(frozen=True)
class BaseStation:
    id: int
    users: tuple[User, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        ids = [u.id for u in self.users]
        if len(set(ids)) != len(ids):
            raise ValueError(f"station {self.id}: duplicate user ids")

    @property
    def total_demand(self) -> int:
        return sum(u.demand_r for u in self.users)


@dataclass(frozen=True)
class Scenario:
    stations: tuple[BaseStation, ...]
    total_vms: int
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "stations", tuple(self.stations))
        if len(self.stations) < 1:
            raise ValueError("a scenario needs at least one base station")
        if self.total_vms < 0:
            raise ValueError("total_vms must be non-negative")

    @property
    def num_stations(self) -> int:
        return len(self.stations)

    @property
    def num_users(self) -> int:
        return sum(len(s.users) for s in self.stations)

    @property
    def placement_count(self) -> int:
        return placement_count(self.num_stations, self.total_vms)

    def validate_placement(self, placement: Sequence[int]) -> tuple[int, ...]:
        counts = tuple(int(c) for c in placement)
        if len(counts) != self.num_stations:
            raise ValueError(f"placement has {len(counts)} entries, scenario has {self.num_stations} stations")
        if any(c < 0 for c in counts):
            raise ValueError(f"placement {counts} has a negative entry")
        if sum(counts) != self.total_vms:
            raise ValueError(f"placement {counts} does not sum to {self.total_vms}")
        return counts


# A placement is a plain tuple of per-station VM counts; it is hashable and
# serves directly as the CTMC state key.
Placement = tuple[int, ...]


@dataclass(frozen=True)
class PriceVector:
    prices: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "prices", tuple(float(p) for p in self.prices))
        for p in self.prices:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"price {p} outside [0, 1]")

    def __len__(self):
        return len(self.prices)

    def __iter__(self):
        return iter(self.prices)


def station_revenue(station: BaseStation, price: float, vm_count: int) -> float:
    """Revenue at one station for a posted ``price`` and ``vm_count`` VMs.

    Users whose valuation is at least the price buy (ties buy). The marginal
    unit may cut into one user's request, so revenue is defined solely by
    ``price * min(demand, vm_count)``.
    """
    if price <= 0 or vm_count <= 0:
        return 0.0
    demand = sum(u.demand_r for u in station.users if u.valuation_u >= price)
    return price * min(demand, vm_count)


def network_revenue(scenario: Scenario, placement: Sequence[int], prices) -> float:
    prices = tuple(prices)
    if len(placement) != scenario.num_stations or len(prices) != scenario.num_stations:
        raise ValueError(
            f"expected {scenario.num_stations} entries, got placement of {len(placement)} "
            f"and {len(prices)} prices"
        )
    return sum(
        station_revenue(st, p, v) for st, p, v in zip(scenario.stations, prices, placement)
    )


def placement_count(num_stations: int, total_vms: int) -> int:
    """Number of compositions of ``total_vms`` into ``num_stations`` parts."""
    return math.comb(total_vms + num_stations - 1, num_stations - 1)


def iter_placements(num_stations: int, total_vms: int) -> Iterator[Placement]:
    """Yield all placements in lexicographic order."""
    if num_stations == 1:
        yield (total_vms,)
        return
    for first in range(total_vms + 1):
        for rest in iter_placements(num_stations - 1, total_vms - first):
            yield (first,) + rest


def enumerate_placements(scenario: Scenario, cap: int = DEFAULT_ENUMERATION_CAP) -> list[Placement]:
    size = scenario.placement_count
    if size > cap:
        raise EnumerationTooLarge(size, cap)
    return list(iter_placements(scenario.num_stations, scenario.total_vms))


def balanced_placement(num_stations: int, total_vms: int) -> Placement:
    """Even split with the remainder going to the lowest-indexed stations."""
    base, extra = divmod(total_vms, num_stations)
    return tuple(base + (1 if k < extra else 0) for k in range(num_stations))


def _check_bounds(valuation_bounds, demand_range):
    a, b = valuation_bounds
    if not 0.0 <= a <= b <= 1.0:
        raise ValueError(f"valuation bounds must satisfy 0 <= a <= b <= 1, got [{a}, {b}]")
    lo, hi = demand_range
    if not 1 <= lo <= hi:
        raise ValueError(f"demand range must satisfy 1 <= lo <= hi, got [{lo}, {hi}]")


def _draw_user(rng: np.random.Generator, uid: int, demand_range, valuation_bounds) -> User:
    # Unit uniform drawn before scaling so that shifting [a, b] keeps the
    # same underlying draws (valuation sweeps stay coupled).
    r = int(rng.integers(demand_range[0], demand_range[1] + 1))
    unit = float(rng.random())
    a, b = valuation_bounds
    return User(uid, r, min(1.0, a + (b - a) * unit))


def generate_scenario(
    num_stations: int,
    total_vms: int,
    users_per_station: Sequence[int],
    demand_range: tuple[int, int] = (1, 3),
    valuation_bounds: tuple[float, float] = (0.0, 1.0),
    seed: int = 0,
) -> Scenario:
    """Draw a random scenario with a fixed number of users at each station.

    Demands are uniform on the integer ``demand_range`` and valuations are
    uniform on ``valuation_bounds``. The result is a pure function of the
    arguments.
    """
    _check_bounds(valuation_bounds, demand_range)
    if len(users_per_station) != num_stations:
        raise ValueError("users_per_station must have one entry per station")
    if total_vms < 0 or any(n < 0 for n in users_per_station):
        raise ValueError("counts must be non-negative")
    rng = np.random.default_rng(seed)
    stations = []
    for k, n in enumerate(users_per_station):
        users = [_draw_user(rng, i, demand_range, valuation_bounds) for i in range(n)]
        stations.append(BaseStation(k, tuple(users)))
    return Scenario(tuple(stations), total_vms, seed)


def generate_demand_scenario(
    num_stations: int,
    total_vms: int,
    total_demand: int,
    demand_range: tuple[int, int] = (1, 3),
    valuation_bounds: tuple[float, float] = (0.0, 1.0),
    seed: int = 0,
) -> Scenario:
    """Draw a scenario whose users request exactly ``total_demand`` VMs in total.

    Users arrive one at a time at uniformly chosen stations until the
    cumulative request reaches the target; the last request is trimmed to
    hit it. For a fixed seed the user set for a smaller target is a prefix of
    the set for a larger one.
    """
    _check_bounds(valuation_bounds, demand_range)
    if total_demand < 0:
        raise ValueError("total_demand must be non-negative")
    rng = np.random.default_rng(seed)
    per_station: list[list[User]] = [[] for _ in range(num_stations)]
    remaining = total_demand
    while remaining > 0:
        k = int(rng.integers(num_stations))
        user = _draw_user(rng, len(per_station[k]), demand_range, valuation_bounds)
        if user.demand_r > remaining:
            user = User(user.id, remaining, user.valuation_u)
        per_station[k].append(user)
        remaining -= user.demand_r
    stations = tuple(BaseStation(k, tuple(us)) for k, us in enumerate(per_station))
    return Scenario(stations, total_vms, seed)


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "seed": scenario.rng_seed,
        "stations": [
            {"users": [{"r": u.demand_r, "u": u.valuation_u} for u in st.users]}
            for st in scenario.stations
        ],
        "total_vms": scenario.total_vms,
    }


def scenario_from_dict(data: dict) -> Scenario:
    try:
        stations = tuple(
            BaseStation(k, tuple(User(i, int(u["r"]), float(u["u"])) for i, u in enumerate(st["users"])))
            for k, st in enumerate(data["stations"])
        )
        return Scenario(stations, int(data["total_vms"]), int(data.get("seed", 0)))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed scenario document: {exc}") from exc


def dumps_scenario(scenario: Scenario) -> str:
    return json.dumps(scenario_to_dict(scenario), sort_keys=True, indent=2) + "\n"


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(dumps_scenario(scenario))


def load_scenario(path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))
