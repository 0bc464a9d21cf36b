"""Provider-optimal repurchasing contracts for idle computing resources.

Core pieces: domain types and utility formulas (``model``), the contract
audit engine (``feasibility``), optimal payment construction (``payments``),
exact/relaxed/brute-force solvers (``solver``), Monte Carlo simulation
(``simulation``), and a JSON-file CLI (``cli``).
"""

from .feasibility import (
    AUDIT_TOL,
    AuditReport,
    check_ic_decomposed,
    check_ic_full,
    check_ir,
    check_resource_feasibility,
    check_resource_greedy,
    check_theorem1,
    compute_regret,
    regret_bound,
)
from .model import (
    OPT_OUT,
    AggregateWeights,
    ClientDistribution,
    Contract,
    MarketInstance,
    TypeGrid,
    ValidationError,
    client_utility,
    provider_expected_utility,
    realized_provider_utility,
)
from .payments import (
    PreconditionError,
    column_payments,
    optimal_payment_multi,
    optimal_payment_single,
    priced_contract,
)
from .simulation import (
    SimulationConfig,
    SimulationSummary,
    best_response,
    estimate_misreport_gain,
    simulate,
)
from .solver import (
    CandidateCountError,
    SolveMethod,
    SolveResult,
    oracle_grid_search,
    relaxed_schedule,
    solve_multi_reduced,
    solve_multi_relaxed,
    solve_single_capacity,
)

__all__ = [
    "AUDIT_TOL",
    "AggregateWeights",
    "AuditReport",
    "CandidateCountError",
    "ClientDistribution",
    "Contract",
    "MarketInstance",
    "OPT_OUT",
    "PreconditionError",
    "SimulationConfig",
    "SimulationSummary",
    "SolveMethod",
    "SolveResult",
    "TypeGrid",
    "ValidationError",
    "best_response",
    "check_ic_decomposed",
    "check_ic_full",
    "check_ir",
    "check_resource_feasibility",
    "check_resource_greedy",
    "check_theorem1",
    "client_utility",
    "column_payments",
    "compute_regret",
    "estimate_misreport_gain",
    "optimal_payment_multi",
    "optimal_payment_single",
    "oracle_grid_search",
    "priced_contract",
    "provider_expected_utility",
    "realized_provider_utility",
    "regret_bound",
    "relaxed_schedule",
    "simulate",
    "solve_multi_reduced",
    "solve_multi_relaxed",
    "solve_single_capacity",
]

__version__ = "0.1.0"
