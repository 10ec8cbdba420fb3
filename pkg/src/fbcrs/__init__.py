"""Forward-backward contention resolution schemes and fair rationing.

An element set arrives in one of two opposite orders, chosen by a fair coin.
A selection plan assigns each element an acceptance probability per order;
the guarantee is the worst pair mean over elements.  The package covers the
single-unit scheme (closed form and instance-optimal LP with dual
certificates), the knapsack scheme with exact fill-law propagation, and the
reduction from fair rationing with Type-I/II/III service to both.
"""

from .errors import (
    FbcrsError,
    InfeasibleError,
    InvalidInstanceError,
    InvariantViolationError,
    SolverError,
)
from .instances import (
    BACKWARD,
    FORWARD,
    DemandLaw,
    KnapsackInstance,
    Permutation,
    RationingInstance,
    ServiceType,
    SingleUnitInstance,
    SizeLaw,
    both_orders,
    draw_quantile_demand,
    dump_instance,
    instance_from_dict,
    instance_to_dict,
    inverse_cdf,
    knapsack_hardness_instance,
    load_instance,
    split_element,
)
from .knapsack import (
    FillDistribution,
    InvariantReport,
    KnapsackExactResult,
    KnapsackFeasibilityReport,
    KnapsackPlan,
    MonitorTraceReport,
    build_branch_tables,
    check_knapsack_feasible,
    closed_form_knapsack_plan,
    initial_fill,
    monitor_invariants,
    monitor_trace,
    phi_knapsack,
    propagate_fill,
    run_knapsack_exact,
    run_knapsack_mc,
)
from .lp_si import (
    DualCertificate,
    DualFeasibilityReport,
    SelectionPlan,
    alpha_0,
    dual_certificate_uniform,
    dual_feasibility,
    gamma,
    solve_lp_si,
)
from .rationing import (
    AgentReport,
    AllocationTrace,
    KnapsackReduction,
    RationingResult,
    RemDistribution,
    ServiceTarget,
    calibrate_tau,
    exante_check,
    knapsack_reduction,
    max_uniform_beta,
    run_rationing,
    service_value,
    solve_q_for_beta,
    supply_x,
)
from .sim import MeanEstimate, RateEstimate, run_trials, stream, wilson_interval
from .single_unit import (
    CrsRunResult,
    PhiCurve,
    bernoulli_params,
    closed_form_plan,
    exact_selection_rates,
    mc_selection_rates,
    phi,
    run_single_unit,
)

__version__ = "0.1.0"

__all__ = [
    "AgentReport",
    "AllocationTrace",
    "BACKWARD",
    "CrsRunResult",
    "DemandLaw",
    "DualCertificate",
    "DualFeasibilityReport",
    "FbcrsError",
    "FillDistribution",
    "FORWARD",
    "InfeasibleError",
    "InvalidInstanceError",
    "InvariantReport",
    "InvariantViolationError",
    "KnapsackExactResult",
    "KnapsackFeasibilityReport",
    "KnapsackInstance",
    "KnapsackPlan",
    "KnapsackReduction",
    "MeanEstimate",
    "MonitorTraceReport",
    "Permutation",
    "PhiCurve",
    "RateEstimate",
    "RationingInstance",
    "RationingResult",
    "RemDistribution",
    "SelectionPlan",
    "ServiceTarget",
    "ServiceType",
    "SingleUnitInstance",
    "SizeLaw",
    "SolverError",
    "alpha_0",
    "bernoulli_params",
    "both_orders",
    "build_branch_tables",
    "calibrate_tau",
    "check_knapsack_feasible",
    "closed_form_knapsack_plan",
    "closed_form_plan",
    "draw_quantile_demand",
    "dual_certificate_uniform",
    "dual_feasibility",
    "dump_instance",
    "exact_selection_rates",
    "exante_check",
    "gamma",
    "initial_fill",
    "instance_from_dict",
    "instance_to_dict",
    "inverse_cdf",
    "knapsack_hardness_instance",
    "knapsack_reduction",
    "load_instance",
    "max_uniform_beta",
    "mc_selection_rates",
    "monitor_invariants",
    "monitor_trace",
    "phi",
    "phi_knapsack",
    "propagate_fill",
    "run_knapsack_exact",
    "run_knapsack_mc",
    "run_rationing",
    "run_single_unit",
    "run_trials",
    "service_value",
    "solve_lp_si",
    "solve_q_for_beta",
    "split_element",
    "stream",
    "supply_x",
    "wilson_interval",
]
