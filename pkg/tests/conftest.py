import itertools

import numpy as np
import pytest

from vmshare.model import BaseStation, Scenario, User


def make_users(valuations, demands=None):
    demands = demands or [1] * len(valuations)
    return [User(i, r, u) for i, (r, u) in enumerate(zip(demands, valuations))]


def make_scenario(stations, total_vms, seed=0):
    """``stations`` is a list of ``[(r, u), ...]`` per station."""
    return Scenario(
        tuple(BaseStation(k, tuple(User(i, r, u) for i, (r, u) in enumerate(users))) for k, users in enumerate(stations)),
        total_vms,
        seed,
    )


def brute_station_revenue(users, price, vm_count):
    """Per-user accumulation, written independently of the library."""
    demand = 0
    for user in users:
        if user.valuation_u >= price:
            demand += user.demand_r
    served = demand if demand < vm_count else vm_count
    return price * served


def brute_placements(num_stations, total_vms):
    """All placements by filtering the full product space."""
    return sorted(p for p in itertools.product(range(total_vms + 1), repeat=num_stations) if sum(p) == total_vms)


def random_users(rng, n_lo=1, n_hi=12, r_hi=3, unit=False):
    n = int(rng.integers(n_lo, n_hi + 1))
    return [
        User(i, 1 if unit else int(rng.integers(1, r_hi + 1)), float(rng.random()))
        for i in range(n)
    ]


def random_scenario(rng, k_hi=3, v_hi=4, users_hi=3):
    K = int(rng.integers(1, k_hi + 1))
    V = int(rng.integers(0, v_hi + 1))
    stations = []
    for _ in range(K):
        n = int(rng.integers(0, users_hi + 1))
        stations.append([(int(rng.integers(1, 4)), float(rng.random())) for _ in range(n)])
    return make_scenario(stations, V)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_setup():
    from vmshare.model import generate_scenario

    return generate_scenario(5, 10, (2, 0, 2, 4, 0), (1, 3), (0.0, 1.0), seed=7)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
