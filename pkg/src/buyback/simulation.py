"""Monte Carlo market simulation against a posted contract menu.

Samples client types, plays each client's best response (affordable items
only, opt-out allowed), and aggregates realized provider utility.  Sampling
uses a counter-based generator (Philox keyed by the seed, one uniform per
(replication, client) cell), so results are reproducible and independent of
evaluation order; aggregation is a fixed-order vectorized reduction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    OPT_OUT,
    Contract,
    MarketInstance,
    TypeGrid,
    ValidationError,
    check_shapes,
)

TIE_TRUTHFUL_FIRST = "truthful_first"
TIE_MAX_PAYMENT = "max_payment"
_TIE_MODES = (TIE_TRUTHFUL_FIRST, TIE_MAX_PAYMENT)

#: Utility gaps below this count as ties when picking a best response.
CHOICE_TOL = 1e-9


@dataclass(frozen=True)
class SimulationConfig:
    """Replication count, RNG seed, and tie-breaking mode."""

    replications: int
    seed: int = 0
    tie_break: str = TIE_TRUTHFUL_FIRST

    def __post_init__(self):
        if self.replications < 1:
            raise ValidationError(f"replications = {self.replications} must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValidationError(f"seed = {self.seed} must fit in 64 unsigned bits")
        if self.tie_break not in _TIE_MODES:
            raise ValidationError(f"tie_break must be one of {_TIE_MODES}")


@dataclass(frozen=True, eq=False)
class SimulationSummary:
    """Aggregates over all replications.

    ``item_counts[k, l]`` counts selections of item (k, l) across all
    (replication, client) cells; together with ``opt_out_count`` the counts
    sum to replications * n.
    """

    mean_utility: float
    std_error: float
    mean_total_repurchase: float
    shortfall_frequency: float
    item_counts: np.ndarray
    opt_out_count: int
    replications: int


def best_response(
    grid: TypeGrid,
    contract: Contract,
    true_type: tuple[int, int],
    tie_break: str = TIE_TRUTHFUL_FIRST,
    tol: float = CHOICE_TOL,
) -> tuple[int, int] | None:
    """Utility-maximizing choice of a client with the given true type.

    Only items whose repurchase amount fits the client's capacity are
    selectable; opting out is always available and worth 0.  Ties within
    ``tol`` go to the truthful item first (then the lexicographically lowest
    item) in ``truthful_first`` mode, or to the highest-payment item in
    ``max_payment`` mode.  A client indifferent between signing and opting
    out signs.
    """
    check_shapes(grid, contract)
    if tie_break not in _TIE_MODES:
        raise ValidationError(f"tie_break must be one of {_TIE_MODES}")
    k, l = true_type
    grid.check_item(k, l)
    cap = float(grid.capacities[l])
    x, p = contract.allocation, contract.payment
    utilities = p - grid.valuations[k] * x
    admissible = x <= cap  # hard restriction, no tolerance

    if np.any(admissible):
        item_best = float(np.max(utilities[admissible]))
    else:
        item_best = -math.inf
    best = max(item_best, 0.0)
    tied = admissible & (utilities >= best - tol)
    if not np.any(tied):
        return OPT_OUT
    if tie_break == TIE_TRUTHFUL_FIRST:
        if tied[k, l]:
            return (k, l)
        k2, l2 = np.argwhere(tied)[0]  # lexicographically lowest (k, l)
        return (int(k2), int(l2))
    pay = np.where(tied, p, -math.inf)
    k2, l2 = np.argwhere(pay == pay.max())[0]
    return (int(k2), int(l2))


def _sample_type_indices(
    instance: MarketInstance, config: SimulationConfig
) -> np.ndarray:
    """(replications, n) flat type indices, l-major, drawn per client."""
    rng = np.random.Generator(np.random.Philox(key=config.seed))
    R, n = config.replications, instance.num_clients
    u = rng.random((R, n))
    types = np.empty((R, n), dtype=np.intp)
    n_types = instance.grid.num_valuations * instance.grid.num_capacities
    for i, client in enumerate(instance.clients):
        cum = np.cumsum(client.probs.ravel())
        types[:, i] = np.minimum(np.searchsorted(cum, u[:, i], side="right"), n_types - 1)
    return types


def _choice_tables(instance: MarketInstance, contract: Contract, tie_break: str):
    """Per-type best-response lookup: chosen x, chosen p, and item code.

    Codes are k * L + l for items, -1 for opt-out; the table index is the
    l-major type index used by the sampler.
    """
    grid = instance.grid
    K, L = grid.num_valuations, grid.num_capacities
    chosen_x = np.zeros(K * L)
    chosen_p = np.zeros(K * L)
    codes = np.full(K * L, -1, dtype=np.intp)
    for l in range(L):
        for k in range(K):
            t = l * K + k
            choice = best_response(grid, contract, (k, l), tie_break)
            if choice is not OPT_OUT:
                k2, l2 = choice
                chosen_x[t] = contract.allocation[k2, l2]
                chosen_p[t] = contract.payment[k2, l2]
                codes[t] = k2 * L + l2
    return chosen_x, chosen_p, codes


def simulate(
    instance: MarketInstance, contract: Contract, config: SimulationConfig
) -> SimulationSummary:
    """Estimate the provider's utility distribution under best responses."""
    check_shapes(instance.grid, contract)
    K, L = instance.grid.num_valuations, instance.grid.num_capacities
    types = _sample_type_indices(instance, config)
    chosen_x, chosen_p, codes = _choice_tables(instance, contract, config.tie_break)

    xs = chosen_x[types]  # (R, n)
    ps = chosen_p[types]
    total_x = xs.sum(axis=1)
    total_p = ps.sum(axis=1)
    shortfall = np.minimum(0.0, total_x - instance.demand_floor)
    utility = instance.alpha * total_x - total_p + instance.penalty * shortfall

    R = config.replications
    mean = float(utility.mean())
    std_error = float(utility.std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0
    counts = np.bincount(codes[types].ravel() + 1, minlength=K * L + 1)
    return SimulationSummary(
        mean_utility=mean,
        std_error=std_error,
        mean_total_repurchase=float(total_x.mean()),
        shortfall_frequency=float(np.mean(total_x < instance.demand_floor)),
        item_counts=counts[1:].reshape(K, L),
        opt_out_count=int(counts[0]),
        replications=R,
    )


def estimate_misreport_gain(
    instance: MarketInstance, contract: Contract, config: SimulationConfig
) -> float:
    """Largest observed utility gain from misreporting, over sampled types.

    The gain of a sampled type is the best affordable item's utility minus
    the truthful item's, floored at zero — the empirical counterpart of the
    exact regret, which it never exceeds.
    """
    check_shapes(instance.grid, contract)
    grid = instance.grid
    K, L = grid.num_valuations, grid.num_capacities
    x, p = contract.allocation, contract.payment

    gains = np.zeros(K * L)
    for l in range(L):
        admissible = x <= grid.capacities[l]
        for k in range(K):
            if not np.any(admissible):
                continue
            utilities = p - grid.valuations[k] * x
            truthful = float(utilities[k, l])
            gains[l * K + k] = max(0.0, float(np.max(utilities[admissible])) - truthful)

    types = _sample_type_indices(instance, config)
    return float(np.max(gains[types]))
