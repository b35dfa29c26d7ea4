"""Joint VM placement and pricing across collaborating MEC base stations."""
from .auctions import AuctionOutcome, Bid, deviation_search, icat, opa, puff
from .markov import simulate, stationary_distribution
from .model import (
    BaseStation,
    EnumerationTooLarge,
    PriceVector,
    Scenario,
    User,
    enumerate_placements,
    generate_scenario,
    network_revenue,
    station_revenue,
)
from .oracle import exhaustive_optimum

__version__ = "0.1.0"
