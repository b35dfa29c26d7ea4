"""Placement chain driven by noisy revenue estimates.

Each placement's revenue estimate is off by ``(n / a_v) * psi_v`` with
probability ``rho_v[n]``, ``n = -a_v..a_v``. Expanding every placement into
its ``2 a_v + 1`` error levels and applying detailed balance yields a
closed-form stationary law: the softmax weights are multiplied by
``sigma_v = sum_n rho_v[n] * exp(beta * (n / a_v) * psi_v)``. This module
builds that law and compares it with the noise-free one.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import log_softmax, logsumexp

from .markov import placement_phis, softmax_distribution
from .model import DEFAULT_ENUMERATION_CAP, Placement, Scenario


@dataclass(frozen=True)
class PerturbationSpec:
    psi: np.ndarray  # per-state half-width of the revenue error
    levels: np.ndarray  # per-state quantisation a_v
    rho: tuple[np.ndarray, ...]  # per-state probabilities over n = -a_v..a_v

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float)
        levels = np.asarray(self.levels, dtype=int)
        rho = tuple(np.asarray(r, dtype=float) for r in self.rho)
        if not (len(psi) == len(levels) == len(rho)):
            raise ValueError("psi, levels and rho must have one entry per state")
        if (psi < 0).any():
            raise ValueError("psi must be non-negative")
        if (levels < 1).any():
            raise ValueError("quantisation levels must be positive")
        for a, r in zip(levels, rho):
            if r.size != 2 * a + 1:
                raise ValueError(f"rho for a={a} needs {2 * a + 1} entries, got {r.size}")
            if (r < 0).any() or abs(r.sum() - 1.0) > 1e-12:
                raise ValueError("each rho must be a probability vector")
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "rho", rho)

    @property
    def num_states(self) -> int:
        return len(self.psi)

    @property
    def psi_max(self) -> float:
        return float(self.psi.max()) if self.psi.size else 0.0

    def offsets(self, i: int) -> np.ndarray:
        """Error values ``(n / a) * psi`` for state ``i``, ascending in ``n``."""
        a = int(self.levels[i])
        return np.arange(-a, a + 1) / a * self.psi[i]

    @classmethod
    def zero(cls, num_states: int) -> "PerturbationSpec":
        return cls(np.zeros(num_states), np.ones(num_states, dtype=int), tuple(np.array([0.0, 1.0, 0.0]) for _ in range(num_states)))

    @classmethod
    def random(cls, num_states: int, rng: np.random.Generator, psi_max: float = 0.2, max_levels: int = 4) -> "PerturbationSpec":
        psi = rng.uniform(0.0, psi_max, num_states)
        levels = rng.integers(1, max_levels + 1, num_states)
        rho = tuple(rng.dirichlet(np.ones(2 * a + 1)) for a in levels)
        # renormalise so the sum-to-one check holds at 1e-12
        rho = tuple(r / r.sum() for r in rho)
        return cls(psi, levels, rho)


@dataclass(frozen=True)
class PerturbedDistribution:
    support: tuple[Placement, ...]
    probabilities: np.ndarray
    sigma_weights: np.ndarray
    phis: np.ndarray


def log_sigma(spec: PerturbationSpec, beta: float) -> np.ndarray:
    return np.array(
        [logsumexp(beta * spec.offsets(i), b=spec.rho[i]) for i in range(spec.num_states)]
    )


def perturbed_from_phis(support, phis, beta: float, spec: PerturbationSpec) -> PerturbedDistribution:
    phis = np.asarray(phis, dtype=float)
    if spec.num_states != phis.size:
        raise ValueError(f"spec covers {spec.num_states} states, space has {phis.size}")
    ls = log_sigma(spec, beta)
    probs = np.exp(log_softmax(ls + beta * phis))
    return PerturbedDistribution(tuple(support), probs, np.exp(ls), phis)


def perturbed_stationary(
    scenario: Scenario, beta: float, spec: PerturbationSpec, evaluator="opa", cap: int = DEFAULT_ENUMERATION_CAP
) -> PerturbedDistribution:
    if beta <= 0:
        raise ValueError("beta must be positive")
    support, phis = placement_phis(scenario, evaluator, cap)
    return perturbed_from_phis(support, phis, beta, spec)


def tv_distance(p, q) -> float:
    """Half the L1 distance between two distributions on the same support.

    Accepts arrays of equal length, mappings from state to probability, or
    objects with ``support`` and ``probabilities``.
    """
    if hasattr(p, "support") and hasattr(q, "support"):
        if tuple(p.support) != tuple(q.support):
            raise ValueError("distributions have different supports")
        p, q = p.probabilities, q.probabilities
    elif isinstance(p, dict) and isinstance(q, dict):
        if set(p) != set(q):
            raise ValueError("distributions have different supports")
        keys = sorted(p)
        p, q = [p[k] for k in keys], [q[k] for k in keys]
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("distributions have different supports")
    return float(0.5 * np.abs(p - q).sum())


@dataclass(frozen=True)
class BoundReport:
    beta: float
    psi_max: float
    tv: float
    tv_bound: float
    revenue_gap: float
    gap_bound: float

    @property
    def tv_holds(self) -> bool:
        return self.tv <= self.tv_bound

    @property
    def gap_holds(self) -> bool:
        return self.revenue_gap <= self.gap_bound

    @property
    def holds(self) -> bool:
        return self.tv_holds and self.gap_holds


def perturbed_mean_revenue(phis: np.ndarray, spec: PerturbationSpec) -> np.ndarray:
    """Expected noisy revenue per state, ``phi_v + sum_n rho_v[n] (n/a_v) psi_v``."""
    return np.array([phis[i] + spec.rho[i] @ spec.offsets(i) for i in range(spec.num_states)])


def bounds_from_phis(support, phis, beta: float, spec: PerturbationSpec) -> BoundReport:
    phis = np.asarray(phis, dtype=float)
    exact = softmax_distribution(support, phis, beta)
    noisy = perturbed_from_phis(support, phis, beta, spec)
    tv = tv_distance(exact, noisy)
    tv_bound = -math.expm1(-2.0 * beta * spec.psi_max)
    noisy_phis = perturbed_mean_revenue(phis, spec)
    gap = float(np.max(np.abs(exact.probabilities * phis - noisy.probabilities * noisy_phis)))
    gap_bound = 2.0 * float(phis.max()) * tv_bound
    return BoundReport(beta, spec.psi_max, tv, tv_bound, gap, gap_bound)


def verify_bounds(
    scenario: Scenario, beta: float, spec: PerturbationSpec, evaluator="opa", cap: int = DEFAULT_ENUMERATION_CAP
) -> BoundReport:
    """Distance between the noisy and exact laws against ``1 - exp(-2 beta psi_max)``.

    The revenue gap is the largest per-state ``|pi_v phi_v - pibar_v phibar_v|``
    with ``phibar_v`` the rho-weighted mean noisy revenue; its bound is
    ``2 max(phi) (1 - exp(-2 beta psi_max))``.
    """
    support, phis = placement_phis(scenario, evaluator, cap)
    return bounds_from_phis(support, phis, beta, spec)


def reports_to_csv(reports: Sequence[BoundReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["beta", "psi_max", "tv", "tv_bound", "gap", "gap_bound", "pass"])
    for r in reports:
        writer.writerow([repr(r.beta), repr(r.psi_max), repr(r.tv), repr(r.tv_bound), repr(r.revenue_gap), repr(r.gap_bound), int(r.holds)])
    return buf.getvalue()

