"""Optimal-allocation solvers for the repurchasing program.

With the optimal payments substituted, the provider's expected utility is
linear in the allocation entries,

    coef[k, l] = w[l, k] * (alpha - v[k]) - (sum_{j < k} w[l, j]) * (v[k] - v[k-1]),

plus the penalty term M * min(0, expected supply - D).  An allocation is
feasible, non-increasing in valuation per column and resource greedy across
capacities exactly when it has the reduced form x[k, l] = min(c[l], y[k])
with c_max >= y[0] >= ... >= y[K-1] >= 0.  In that parameterization the
objective is piecewise linear with kinks only at the capacities and at the
supply-equals-demand-floor hyperplane, so its exact maximum sits at a vertex:
every y[k] at a value in {0, c[1], ..., c[L]} except at most one consecutive
block pinned by the demand-floor crossing.  The exact solvers enumerate
precisely those candidates.

Three solving routes live here:

* ``solve_single_capacity`` / ``solve_multi_reduced`` — exact, via the
  reduced vertex enumeration above (epsilon = 0, complementarity exact);
* ``solve_multi_relaxed`` — multi-start projected pattern search over the
  full K*L allocation with the bilinear greediness constraint relaxed to
  (x[k,l'] - x[k,l]) * (c[l] - x[k,l]) <= epsilon for all ordered pairs;
* ``oracle_grid_search`` — an independent brute force over a fine lattice of
  reduced allocations, evaluating payments and expected utility from their
  definitions rather than through the coefficient form.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .model import (
    AggregateWeights,
    Contract,
    MarketInstance,
    ValidationError,
    provider_expected_utility,
)
from .payments import column_payments, optimal_payment_multi

#: Hard cap on brute-force candidate counts (oracle and exact enumeration).
MAX_CANDIDATES = 10_000_000

_EVAL_CHUNK = 1 << 18


class CandidateCountError(ValidationError):
    """The requested enumeration would exceed the candidate budget."""


class SolveMethod(str, enum.Enum):
    SINGLE_EXACT = "single_exact"
    MULTI_REDUCED_EXACT = "multi_reduced_exact"
    MULTI_RELAXED = "multi_relaxed"
    ORACLE = "oracle"


@dataclass(frozen=True, eq=False)
class SolveResult:
    """A solver's contract plus bookkeeping.

    ``expected_utility`` re-evaluates the returned contract under the
    instance; ``aux_t`` is the linearization variable min(0, supply - D);
    ``epsilon`` is 0 for exact methods.  ``diagnostics`` carries candidate
    and iteration counts.
    """

    contract: Contract
    expected_utility: float
    method: SolveMethod
    epsilon: float
    aux_t: float
    diagnostics: dict


def _reduced_coefficients(instance: MarketInstance) -> tuple[np.ndarray, np.ndarray]:
    """Objective coefficients (K, L) of each allocation entry, and weights (L, K)."""
    w = AggregateWeights.from_instance(instance).weights
    v = instance.grid.valuations
    wT = w.T.copy()  # (K, L)
    coef = wT * (instance.alpha - v[:, None])
    if v.size > 1:
        below = np.cumsum(wT, axis=0)[:-1, :]  # mass at valuations <= k-1
        coef[1:, :] -= below * np.diff(v)[:, None]
    return coef, w


def _expected_supply(w: np.ndarray, allocation: np.ndarray) -> float:
    return float(np.einsum("kl,lk->", allocation, w))


def _nonincreasing_tuples(values: np.ndarray, count: int):
    """All non-increasing ``count``-tuples drawn from ``values`` (ascending)."""
    if count == 0:
        yield ()
        return
    for combo in itertools.combinations_with_replacement(values[::-1], count):
        yield combo


def _grid_candidates(grid_values: np.ndarray, K: int):
    for combo in itertools.combinations_with_replacement(grid_values[::-1], K):
        yield np.array(combo)


def _crossing_candidates(
    grid_values: np.ndarray,
    caps: np.ndarray,
    w: np.ndarray,
    demand_floor: float,
) -> list[np.ndarray]:
    """Vertices where a block of equal y-coordinates sits on supply == D.

    For each consecutive block [a..b], each capacity segment, and each grid
    assignment of the remaining coordinates, at most one block value makes
    the expected supply hit the demand floor; that value is a candidate.
    """
    K = w.shape[1]
    L = caps.size
    ngrid = grid_values.size  # == L + 1, grid_values[m] == c^m with c^0 = 0
    # H[j, gi] = expected supply contribution of coordinate j held at grid value gi
    H = w.T @ np.minimum(caps[:, None], grid_values[None, :])
    out: list[np.ndarray] = []
    for a in range(K):
        for b in range(a, K):
            block = slice(a, b + 1)
            for m in range(L):
                slope = float(np.sum(w[m:, block]))
                if slope <= 0.0:
                    continue
                const = float(np.sum(w[:m, block] * caps[:m, None]))
                lo_val, hi_val = grid_values[m], grid_values[m + 1]
                for prefix in _nonincreasing_tuples(grid_values[m + 1 :], a):
                    rest_prefix = sum(
                        H[j, m + 1 + int(np.searchsorted(grid_values[m + 1 :], prefix[j]))]
                        for j in range(a)
                    )
                    for suffix in _nonincreasing_tuples(grid_values[: m + 1], K - 1 - b):
                        rest = rest_prefix + sum(
                            H[b + 1 + j, int(np.searchsorted(grid_values, suffix[j]))]
                            for j in range(K - 1 - b)
                        )
                        theta = (demand_floor - rest - const) / slope
                        if lo_val - 1e-12 <= theta <= hi_val + 1e-12:
                            theta = min(max(theta, lo_val), hi_val)
                            y = np.empty(K)
                            y[:a] = prefix
                            y[block] = theta
                            y[b + 1 :] = suffix
                            out.append(y)
    return out


def _count_grid_candidates(K: int, L: int) -> int:
    return math.comb(K + L, K)


def _best_by_key(candidates: np.ndarray, objective: np.ndarray, supply: np.ndarray):
    """Index of the best candidate: objective, then supply, then lex-larger y."""
    top = np.flatnonzero(objective == objective.max())
    if top.size > 1:
        s = supply[top]
        top = top[s == s.max()]
    if top.size > 1:
        top = [max(top, key=lambda i: tuple(candidates[i]))]
    i = int(top[0])
    return i, (float(objective[i]), float(supply[i]), tuple(candidates[i]))


def _solve_exact(instance: MarketInstance, method: SolveMethod) -> SolveResult:
    grid = instance.grid
    K, L = grid.num_valuations, grid.num_capacities
    caps = grid.capacities
    coef, w = _reduced_coefficients(instance)
    M, D = instance.penalty, instance.demand_floor

    n_grid = _count_grid_candidates(K, L)
    if n_grid > MAX_CANDIDATES:
        raise CandidateCountError(
            f"exact enumeration needs {n_grid} grid candidates (limit {MAX_CANDIDATES})"
        )
    grid_values = np.concatenate([[0.0], caps])
    candidates = list(_grid_candidates(grid_values, K))
    n_cross = 0
    if M > 0.0 and D > 0.0:
        crossings = _crossing_candidates(grid_values, caps, w, D)
        n_cross = len(crossings)
        candidates.extend(crossings)

    best_idx_key = None
    best_y = None
    Y_all = np.array(candidates)
    for start in range(0, Y_all.shape[0], _EVAL_CHUNK):
        Y = Y_all[start : start + _EVAL_CHUNK]
        X = np.minimum(caps[None, None, :], Y[:, :, None])
        lin = np.einsum("ckl,kl->c", X, coef)
        supply = np.einsum("ckl,lk->c", X, w)
        obj = lin + M * np.minimum(0.0, supply - D)
        i, key = _best_by_key(Y, obj, supply)
        if best_idx_key is None or key > best_idx_key:
            best_idx_key = key
            best_y = Y[i]

    x = np.minimum(caps[None, :], best_y[:, None])
    contract = Contract(x, optimal_payment_multi(grid, x))
    supply = _expected_supply(w, x)
    return SolveResult(
        contract=contract,
        expected_utility=provider_expected_utility(instance, contract),
        method=method,
        epsilon=0.0,
        aux_t=min(0.0, supply - D),
        diagnostics={
            "candidates": len(candidates),
            "grid_candidates": n_grid,
            "crossing_candidates": n_cross,
        },
    )


def solve_single_capacity(instance: MarketInstance) -> SolveResult:
    """Exact optimal contract when every client shares one capacity (L = 1)."""
    if instance.grid.num_capacities != 1:
        raise ValidationError(
            "solve_single_capacity requires L = 1; use solve_multi_reduced instead"
        )
    return _solve_exact(instance, SolveMethod.SINGLE_EXACT)


def solve_multi_reduced(instance: MarketInstance) -> SolveResult:
    """Exact optimal contract via the reduced min(capacity, y) enumeration."""
    return _solve_exact(instance, SolveMethod.MULTI_REDUCED_EXACT)


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------


def _pwl_crossing_values(seg_weights: np.ndarray, caps: np.ndarray, target: float) -> list[float]:
    """Solve sum_l W[l] * min(c[l], theta) == target for theta in [0, c_max]."""
    out: list[float] = []
    grid_values = np.concatenate([[0.0], caps])
    for m in range(caps.size):
        slope = float(np.sum(seg_weights[m:]))
        const = float(np.sum(seg_weights[:m] * caps[:m]))
        if slope <= 0.0:
            continue
        theta = (target - const) / slope
        if grid_values[m] <= theta <= grid_values[m + 1]:
            out.append(float(theta))
    return out


def _oracle_axis(instance: MarketInstance, grid_step: float, w: np.ndarray) -> np.ndarray:
    caps = instance.grid.capacities
    cmax = float(caps[-1])
    steps = np.arange(0.0, cmax + grid_step * 0.5, grid_step)
    values = [steps, caps]
    if instance.penalty > 0.0 and instance.demand_floor > 0.0:
        D = instance.demand_floor
        K = instance.grid.num_valuations
        full = w.T @ caps  # supply contribution of each coordinate at full recycling
        extra: list[float] = []
        extra += _pwl_crossing_values(np.sum(w, axis=1), caps, D)  # all coords equal
        for k in range(K):
            extra += _pwl_crossing_values(w[:, k], caps, D)  # others idle
            extra += _pwl_crossing_values(w[:, k], caps, D - (float(np.sum(full)) - full[k]))
        if extra:
            values.append(np.array(extra))
    axis = np.unique(np.concatenate(values))
    return axis[(axis >= 0.0) & (axis <= cmax + 1e-12)]


def _monotone_chunks(axis: np.ndarray, K: int, chunk: int = _EVAL_CHUNK):
    B = axis.size
    if K == 1:
        for start in range(0, B, chunk):
            yield axis[start : start + chunk, None]
        return
    if K == 2:
        # pairs (axis[i], axis[j <= i]), emitted in blocks of whole i-rows
        i = 0
        while i < B:
            j = i
            total = 0
            while j < B and (total == 0 or total + j + 1 <= chunk):
                total += j + 1
                j += 1
            counts = np.arange(i + 1, j + 1)
            first = np.repeat(axis[i:j], counts)
            second = np.concatenate([axis[:c] for c in counts])
            yield np.column_stack([first, second])
            i = j
        return
    batch: list[tuple] = []
    for combo in itertools.combinations_with_replacement(axis[::-1], K):
        batch.append(combo)
        if len(batch) >= chunk:
            yield np.array(batch)
            batch = []
    if batch:
        yield np.array(batch)


def _menu_columns(Y: np.ndarray, caps: np.ndarray, v: np.ndarray):
    """Per-valuation allocation and payment slices, shape (C, L) each.

    Payments follow the closed form p_k = v_K x_K - sum_{j>=k} v_j
    (x_{j+1} - x_j), accumulated as a suffix sum.
    """
    K = Y.shape[1]
    X = [np.minimum(caps[None, :], Y[:, k, None]) for k in range(K)]
    P = [None] * K
    P[K - 1] = v[K - 1] * X[K - 1]
    tail = 0.0
    for k in range(K - 2, -1, -1):
        tail = tail + v[k] * (X[k + 1] - X[k])
        P[k] = v[K - 1] * X[K - 1] - tail
    return X, P


def oracle_grid_search(instance: MarketInstance, grid_step: float) -> SolveResult:
    """Brute-force maximizer of the expected utility over lattice allocations.

    Enumerates every monotone reduced allocation with y-values on the lattice
    {0, grid_step, 2*grid_step, ...} plus the capacities and the supply/demand
    crossing values, prices each with the optimal payments evaluated in closed
    form, and keeps the best by direct expected-utility evaluation.  Raises
    CandidateCountError when the lattice would exceed the candidate budget.
    """
    if grid_step <= 0.0:
        raise ValidationError(f"grid_step = {grid_step} must be positive")
    grid = instance.grid
    K = grid.num_valuations
    caps = grid.capacities
    v = grid.valuations
    w = AggregateWeights.from_instance(instance).weights
    alpha, M, D = instance.alpha, instance.penalty, instance.demand_floor

    axis = _oracle_axis(instance, grid_step, w)
    count = math.comb(axis.size + K - 1, K)
    if count > MAX_CANDIDATES:
        raise CandidateCountError(
            f"oracle lattice has {count} candidates (limit {MAX_CANDIDATES}); "
            f"increase grid_step"
        )

    best_key = None
    best_y = None
    for Y in _monotone_chunks(axis, K):
        X, P = _menu_columns(Y, caps, v)
        util = np.zeros(Y.shape[0])
        supply = np.zeros(Y.shape[0])
        for k in range(K):
            util += (alpha * X[k] - P[k]) @ w[:, k]
            supply += X[k] @ w[:, k]
        util += M * np.minimum(0.0, supply - D)
        i, key = _best_by_key(Y, util, supply)
        if best_key is None or key > best_key:
            best_key = key
            best_y = Y[i]

    X, P = _menu_columns(best_y[None, :], caps, v)
    x = np.vstack([col[0] for col in X])
    p = np.vstack([col[0] for col in P])
    contract = Contract(x, p)
    supply = _expected_supply(w, x)
    return SolveResult(
        contract=contract,
        expected_utility=provider_expected_utility(instance, contract),
        method=SolveMethod.ORACLE,
        epsilon=0.0,
        aux_t=min(0.0, supply - D),
        diagnostics={"candidates": count, "axis_size": int(axis.size)},
    )


# ---------------------------------------------------------------------------
# Relaxed multi-capacity solver
# ---------------------------------------------------------------------------


def _row_products_ok(row: list, caps: np.ndarray, epsilon: float) -> bool:
    L = len(row)
    for l1 in range(L - 1):
        slack = float(caps[l1]) - row[l1]
        for l2 in range(l1 + 1, L):
            if (row[l2] - row[l1]) * slack > epsilon:
                return False
    return True


def _pattern_search(
    x0: np.ndarray,
    coef: np.ndarray,
    w: np.ndarray,
    caps: np.ndarray,
    penalty: float,
    demand_floor: float,
    epsilon: float,
    max_iterations: int,
    min_step: float,
):
    """Feasible coordinate pattern search with step halving.

    Every iterate satisfies the ordering constraints by construction (moves
    are clipped into the box allowed by the neighbors) and the relaxed
    bilinear constraints by rejection.
    """
    K, L = x0.shape
    x = [[float(val) for val in row] for row in x0]
    coef_l = coef.tolist()
    wkl = w.T.tolist()  # wkl[k][l]
    caps_l = [float(c) for c in caps]

    lin = sum(coef_l[k][l] * x[k][l] for k in range(K) for l in range(L))
    supply = sum(wkl[k][l] * x[k][l] for k in range(K) for l in range(L))
    obj = lin + penalty * min(0.0, supply - demand_floor)

    step = caps_l[-1] / 4.0
    iters = 0
    while step >= min_step and iters < max_iterations:
        improved = False
        for k in range(K):
            for l in range(L):
                for delta in (step, -step):
                    iters += 1
                    old = x[k][l]
                    hi = caps_l[l]
                    if k > 0 and x[k - 1][l] < hi:
                        hi = x[k - 1][l]
                    if l + 1 < L and x[k][l + 1] < hi:
                        hi = x[k][l + 1]
                    lo = 0.0
                    if k + 1 < K and x[k + 1][l] > lo:
                        lo = x[k + 1][l]
                    if l > 0 and x[k][l - 1] > lo:
                        lo = x[k][l - 1]
                    cand = old + delta
                    if cand > hi:
                        cand = hi
                    elif cand < lo:
                        cand = lo
                    if cand == old:
                        continue
                    x[k][l] = cand
                    if not _row_products_ok(x[k], caps, epsilon):
                        x[k][l] = old
                        continue
                    d = cand - old
                    new_lin = lin + coef_l[k][l] * d
                    new_supply = supply + wkl[k][l] * d
                    new_obj = new_lin + penalty * min(0.0, new_supply - demand_floor)
                    if new_obj > obj + 1e-12:
                        lin, supply, obj = new_lin, new_supply, new_obj
                        improved = True
                    else:
                        x[k][l] = old
                if iters >= max_iterations:
                    break
            if iters >= max_iterations:
                break
        if not improved:
            step *= 0.5

    x_arr = np.array(x)
    lin = float(np.sum(coef * x_arr))
    supply = _expected_supply(w, x_arr)
    obj = lin + penalty * min(0.0, supply - demand_floor)
    return x_arr, obj, supply, iters


def _feasible_start(x: np.ndarray, caps: np.ndarray, epsilon: float) -> np.ndarray:
    """Repair a warm start so it satisfies the relaxed program's constraints.

    Rows violating the bilinear constraints snap back to min(c, y) form;
    if that breaks the cross-row ordering, the whole matrix is rebuilt from
    its reduced form (products all zero, ordering exact).
    """
    out = x.copy()
    for k in range(x.shape[0]):
        if not _row_products_ok(list(out[k]), caps, epsilon):
            out[k] = np.minimum(caps, out[k, -1])
    if out.shape[0] > 1 and np.any(np.diff(out, axis=0) > 0):
        y = np.minimum.accumulate(x[:, -1])
        out = np.minimum(caps[None, :], y[:, None])
    return out


def _solve_relaxed(
    instance: MarketInstance,
    epsilon: float,
    restarts: int,
    seed: int,
    extra_starts: tuple[np.ndarray, ...] = (),
    max_iterations: int = 100_000,
    min_step: float = 1e-10,
) -> SolveResult:
    grid = instance.grid
    K, L = grid.num_valuations, grid.num_capacities
    caps = grid.capacities
    coef, w = _reduced_coefficients(instance)
    M, D = instance.penalty, instance.demand_floor

    warm = _solve_exact(instance, SolveMethod.MULTI_REDUCED_EXACT)
    starts = [warm.contract.allocation, np.zeros((K, L))]
    starts.extend(_feasible_start(x, caps, epsilon) for x in extra_starts)
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        y = np.sort(rng.uniform(0.0, float(caps[-1]), K))[::-1]
        starts.append(np.minimum(caps[None, :], y[:, None]))

    best = None
    best_key = None
    total_iters = 0
    for x0 in starts:
        x, obj, supply, iters = _pattern_search(
            x0, coef, w, caps, M, D, epsilon, max_iterations, min_step
        )
        total_iters += iters
        key = (obj, supply, tuple(x.ravel()))
        if best_key is None or key > best_key:
            best_key = key
            best = (x, supply)

    x, supply = best
    p = np.empty_like(x)
    for l in range(L):
        p[:, l] = column_payments(grid.valuations, x[:, l], float(caps[l]))
    contract = Contract(x, p)
    return SolveResult(
        contract=contract,
        expected_utility=provider_expected_utility(instance, contract),
        method=SolveMethod.MULTI_RELAXED,
        epsilon=epsilon,
        aux_t=min(0.0, supply - D),
        diagnostics={
            "starts": len(starts),
            "iterations": total_iters,
            "restarts": restarts,
            "seed": seed,
        },
    )


def solve_multi_relaxed(
    instance: MarketInstance,
    epsilon: float = 1e-6,
    restarts: int = 4,
    seed: int = 0,
) -> SolveResult:
    """Multi-start local search on the epsilon-relaxed complementarity program.

    Starts from the reduced-exact solution, the zero contract, and
    ``restarts`` random reduced allocations; every iterate stays feasible for
    the relaxed program, so the returned contract's misreport regret is at
    most regret_bound(grid, epsilon).
    """
    if epsilon <= 0.0:
        raise ValidationError(
            f"epsilon = {epsilon} must be positive; use solve_multi_reduced for the "
            "exact complementarity program"
        )
    if restarts < 1:
        raise ValidationError(f"restarts = {restarts} must be >= 1")
    return _solve_relaxed(instance, epsilon, restarts, seed)


def relaxed_schedule(
    instance: MarketInstance,
    epsilons: tuple[float, ...] = (1e-2, 1e-4, 1e-6),
    restarts: int = 4,
    seed: int = 0,
) -> SolveResult:
    """Warm-started decreasing-epsilon sweep for hard instances.

    Each stage seeds the next with its solution (rows projected back to the
    greedy form where the tighter epsilon would reject them); the result is
    the final, smallest-epsilon solve.
    """
    if not epsilons:
        raise ValidationError("epsilons must be non-empty")
    result = None
    carried: tuple[np.ndarray, ...] = ()
    for eps in epsilons:
        if eps <= 0.0:
            raise ValidationError(f"epsilon = {eps} must be positive")
        result = _solve_relaxed(instance, eps, restarts, seed, extra_starts=carried)
        carried = (result.contract.allocation,)
    return result
