"""Provider-optimal payment construction for a given feasible allocation.

Given an allocation that is feasible, non-increasing in valuation and greedy
across capacities, the cheapest payments that keep the menu incentive
compatible and individually rational are fixed: the top valuation is paid
exactly its own value for what it returns, and every lower valuation is paid
by a backward telescoping step that makes it indifferent to the next item up
the menu.  The recursion runs column by column (one capacity at a time).

Payments are computed by backward recursion rather than the equivalent
closed-form sum to avoid O(K^2) accumulation error; the closed form is kept
as a test oracle.
"""

from __future__ import annotations

import numpy as np

from .model import Contract, TypeGrid, ValidationError

#: Allocation slack treated as roundoff and clamped before the recursion.
CLAMP_TOL = 1e-9


class PreconditionError(ValidationError):
    """The allocation handed to a payment rule violates its structure."""


def column_payments(
    valuations: np.ndarray,
    allocation_column: np.ndarray,
    capacity: float,
    tol: float = CLAMP_TOL,
) -> np.ndarray:
    """Optimal payments for one capacity column.

    Requires ``capacity >= x[0] >= ... >= x[K-1] >= 0`` up to ``tol``;
    violations within tol are clamped to the boundary, larger ones raise
    PreconditionError naming the offending index.
    """
    v = np.asarray(valuations, dtype=float)
    x = np.array(allocation_column, dtype=float)
    if x.ndim != 1 or x.shape != v.shape:
        raise PreconditionError(
            f"allocation column has shape {x.shape}, expected {v.shape}"
        )
    K = x.size
    if np.any(x > capacity + tol):
        k = int(np.argmax(x - capacity))
        raise PreconditionError(
            f"allocation exceeds capacity at k={k}: x={x[k]!r} > c={capacity!r}"
        )
    if np.any(x < -tol):
        k = int(np.argmin(x))
        raise PreconditionError(f"allocation negative at k={k}: x={x[k]!r}")
    rises = np.diff(x)
    if np.any(rises > tol):
        k = int(np.argmax(rises))
        raise PreconditionError(
            f"allocation not non-increasing in valuation: x[{k + 1}]={x[k + 1]!r} "
            f"> x[{k}]={x[k]!r}"
        )

    # Sub-tol violations are roundoff from relaxed solvers: clamp them away.
    np.clip(x, 0.0, capacity, out=x)
    np.minimum.accumulate(x, out=x)

    p = np.empty(K)
    p[K - 1] = v[K - 1] * x[K - 1]
    for k in range(K - 2, -1, -1):
        p[k] = p[k + 1] - v[k] * (x[k + 1] - x[k])
    return p


def optimal_payment_single(
    grid: TypeGrid, allocation: np.ndarray, tol: float = CLAMP_TOL
) -> np.ndarray:
    """Optimal payment column for a single-capacity grid (L = 1)."""
    if grid.num_capacities != 1:
        raise ValidationError(
            f"optimal_payment_single needs a single-capacity grid, got L={grid.num_capacities}"
        )
    return column_payments(grid.valuations, allocation, float(grid.capacities[0]), tol)


def optimal_payment_multi(
    grid: TypeGrid, allocation: np.ndarray, tol: float = CLAMP_TOL
) -> np.ndarray:
    """Optimal payment matrix, applied column by column.

    The allocation must already satisfy resource feasibility (P1), be
    non-increasing in valuation per column (P2) and greedy across capacities
    (P6); violations beyond ``tol`` raise PreconditionError naming the
    property and indices.
    """
    x = np.asarray(allocation, dtype=float)
    K, L = grid.num_valuations, grid.num_capacities
    if x.shape != (K, L):
        raise PreconditionError(f"allocation has shape {x.shape}, expected {(K, L)}")
    c = grid.capacities

    over = x - c[None, :]
    if np.any(over > tol):
        k, l = np.argwhere(over > tol)[0]
        raise PreconditionError(
            f"P1 violated at item (k={k}, l={l}): x={x[k, l]!r} > c={c[l]!r}"
        )
    if np.any(x < -tol):
        k, l = np.argwhere(x < -tol)[0]
        raise PreconditionError(f"P1 violated at item (k={k}, l={l}): x={x[k, l]!r} < 0")
    if K > 1:
        rises = np.diff(x, axis=0)
        if np.any(rises > tol):
            k, l = np.argwhere(rises > tol)[0]
            raise PreconditionError(
                f"P2 violated in column l={l}: x[{k + 1}]={x[k + 1, l]!r} > x[{k}]={x[k, l]!r}"
            )
    for lo in range(L):
        for hi in range(lo + 1, L):
            drops = x[:, lo] - x[:, hi]
            if np.any(drops > tol):
                k = int(np.argmax(drops))
                raise PreconditionError(
                    f"P6 violated (capacity monotonicity) in row k={k}: "
                    f"x[l={lo}]={x[k, lo]!r} > x[l={hi}]={x[k, hi]!r}"
                )
            strictly_more = x[:, hi] > x[:, lo] + tol
            unrecycled = strictly_more & (np.abs(x[:, lo] - c[lo]) > tol)
            if np.any(unrecycled):
                k = int(np.argmax(unrecycled))
                raise PreconditionError(
                    f"P6 violated (maximal recycling) in row k={k}: "
                    f"x[l={hi}]={x[k, hi]!r} > x[l={lo}]={x[k, lo]!r} "
                    f"but x[l={lo}] != c={c[lo]!r}"
                )

    p = np.empty_like(x)
    for l in range(L):
        p[:, l] = column_payments(grid.valuations, x[:, l], float(c[l]), tol)
    return p


def priced_contract(grid: TypeGrid, allocation: np.ndarray, tol: float = CLAMP_TOL) -> Contract:
    """Bundle an allocation with its optimal payments into a Contract."""
    return Contract(np.asarray(allocation, dtype=float), optimal_payment_multi(grid, allocation, tol))
