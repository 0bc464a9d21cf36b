"""Shared random generators for the test suite."""

from __future__ import annotations

import numpy as np

from buyback import (
    ClientDistribution,
    Contract,
    MarketInstance,
    TypeGrid,
    optimal_payment_multi,
)


def random_grid(rng, max_k=3, max_l=3, integer=False, k=None, l=None) -> TypeGrid:
    K = int(k) if k is not None else int(rng.integers(1, max_k + 1))
    L = int(l) if l is not None else int(rng.integers(1, max_l + 1))
    if integer:
        vals = np.sort(rng.choice(np.arange(1, 7), size=K, replace=False)).astype(float)
        caps = np.sort(rng.choice(np.arange(1, 5), size=L, replace=False)).astype(float)
    else:
        vals = rng.uniform(0.2, 1.0) + np.cumsum(rng.uniform(0.3, 2.0, K))
        caps = rng.uniform(0.5, 2.0) + np.cumsum(rng.uniform(0.5, 3.0, L))
    return TypeGrid(vals, caps)


def random_clients(rng, grid: TypeGrid, n: int) -> tuple[ClientDistribution, ...]:
    L, K = grid.num_capacities, grid.num_valuations
    out = []
    for _ in range(n):
        raw = rng.random((L, K)) ** 2 + 1e-3
        out.append(ClientDistribution(raw / raw.sum()))
    return tuple(out)


def point_mass_clients(rng, grid: TypeGrid, n: int) -> tuple[ClientDistribution, ...]:
    L, K = grid.num_capacities, grid.num_valuations
    out = []
    for _ in range(n):
        probs = np.zeros((L, K))
        probs[rng.integers(L), rng.integers(K)] = 1.0
        out.append(ClientDistribution(probs))
    return tuple(out)


def random_instance(
    rng,
    max_k=3,
    max_l=3,
    max_n=3,
    integer=False,
    k=None,
    l=None,
    point_mass=False,
) -> MarketInstance:
    grid = random_grid(rng, max_k=max_k, max_l=max_l, integer=integer, k=k, l=l)
    n = int(rng.integers(1, max_n + 1))
    clients = (
        point_mass_clients(rng, grid, n) if point_mass else random_clients(rng, grid, n)
    )
    if integer:
        alpha = float(rng.integers(1, 7))
        penalty = float(rng.integers(0, 4))
    else:
        alpha = float(rng.uniform(0.5 * grid.valuations[0], 1.5 * grid.valuations[-1]))
        penalty = float(rng.uniform(0.0, 4.0))
    demand_floor = 0.0
    if rng.random() < 0.7:
        demand_floor = float(rng.uniform(0.0, 1.2 * n * grid.capacities[-1]))
        if integer:
            demand_floor = round(demand_floor, 1)
    return MarketInstance(
        grid=grid, clients=clients, alpha=alpha, penalty=penalty, demand_floor=demand_floor
    )


def random_monotone_y(rng, grid: TypeGrid, min_bottom: float = 0.0) -> np.ndarray:
    """Non-increasing y vector in [min_bottom, c_max], with structural atoms."""
    K = grid.num_valuations
    cmax = float(grid.capacities[-1])
    y = rng.uniform(min_bottom, cmax, K)
    atoms = np.concatenate([grid.capacities, [cmax]])
    for i in range(K):
        if rng.random() < 0.3:
            y[i] = max(min_bottom, float(rng.choice(atoms)))
    return np.sort(y)[::-1]


def greedy_allocation(grid: TypeGrid, y: np.ndarray) -> np.ndarray:
    return np.minimum(grid.capacities[None, :], np.asarray(y, dtype=float)[:, None])


def random_feasible_contract(
    rng, grid: TypeGrid, min_bottom: float = 0.0, pay_shift: bool = False
) -> Contract:
    """Feasible + greedy allocation priced with the optimal payments.

    With ``pay_shift`` a constant is sometimes added to every payment, which
    preserves both IC inequalities (differences are unchanged) and IR.
    """
    x = greedy_allocation(grid, random_monotone_y(rng, grid, min_bottom))
    p = optimal_payment_multi(grid, x)
    if pay_shift and rng.random() < 0.3:
        p = p + rng.uniform(0.0, 1.0)
    return Contract(x, p)


def linear_penalty_regime(rng, instance: MarketInstance, contract: Contract) -> MarketInstance:
    """Same market, demand floor moved where the penalty is linear in supply.

    The analytic expected utility applies min{0, .} to the *expected* supply;
    the mean realized utility averages the min.  The two coincide only when
    the min is linear over the whole realized-supply range: no penalty, a
    zero floor, or a floor above the largest possible supply.
    """
    mode = int(rng.integers(3))
    if mode == 0:
        penalty, demand = 0.0, instance.demand_floor
    elif mode == 1:
        penalty, demand = instance.penalty, 0.0
    else:
        penalty = instance.penalty
        demand = instance.num_clients * float(np.max(contract.allocation)) * 1.05 + 1.0
    return MarketInstance(
        instance.grid, instance.clients, instance.alpha, penalty, demand
    )


def satisfies_greedy_and_feasible(x, caps) -> bool:
    """Resource feasibility plus both resource-greedy clauses, by definition."""
    K, L = x.shape
    for k in range(K):
        for lo in range(L):
            if x[k, lo] > caps[lo]:
                return False
            for hi in range(lo + 1, L):
                if x[k, hi] < x[k, lo]:
                    return False
                if x[k, hi] > x[k, lo] and x[k, lo] != caps[lo]:
                    return False
    return True


def representable_as_min_form(x, caps) -> bool:
    """Whether each row equals min(caps, y) for some scalar y (y = last entry)."""
    K, L = x.shape
    for k in range(K):
        y = x[k, L - 1]
        if any(x[k, l] != min(caps[l], y) for l in range(L)):
            return False
    return True


def perturb_contract(rng, grid: TypeGrid, contract: Contract) -> Contract:
    """One random structured perturbation of a payment or allocation entry."""
    K, L = contract.shape
    x = contract.allocation.copy()
    p = contract.payment.copy()
    k = int(rng.integers(K))
    l = int(rng.integers(L))
    delta = float(rng.uniform(0.05, 0.5))
    kind = rng.choice(["pay_up", "pay_down", "alloc_down", "alloc_up"])
    if kind == "pay_up":
        p[k, l] += delta
    elif kind == "pay_down":
        p[k, l] = max(0.0, p[k, l] - delta)
    elif kind == "alloc_down":
        x[k, l] = max(0.0, x[k, l] - delta)
    else:
        cap = float(grid.capacities[l])
        if K == 1:
            x[k, l] = min(cap, x[k, l] + delta)  # stay within capacity
        else:
            x[k, l] += delta
    return Contract(x, p)
