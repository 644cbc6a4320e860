"""Convex relaxations and global branch-and-bound for nonconvex MIQPs."""

from .bnb import BnbConfig, SolveReport, brute_force_oracle, solve
from .cli import (
    MetricsRow,
    generate_instance,
    relative_gap,
    root_gap,
    run_batch,
    shifted_geomean,
)
from .model import (
    HullForm,
    InstanceError,
    MiqpInstance,
    VariableDomain,
    evaluate_objective,
    hull_lower,
    hull_upper,
    is_feasible,
    load_instance,
    save_instance,
)
from .relax import (
    AlphaSelection,
    CutPool,
    CuttingSurfaceResult,
    InfeasibleRelaxation,
    ReducedProblem,
    RelaxationSolution,
    SolveFailure,
    cut_violation,
    cutting_surface,
    initial_perturbation,
    select_alpha,
    solve_eigenvalue_relaxation,
    solve_qcp,
    solve_qp_child,
    surrogate_root_perturbation,
)
from .separation import (
    SeparationConfig,
    SeparationInput,
    SeparationResult,
    eta_from_relaxation,
    rho_init,
    solve_nonsmooth,
    solve_smooth,
)

__version__ = "0.1.0"

__all__ = [
    "AlphaSelection",
    "BnbConfig",
    "CutPool",
    "CuttingSurfaceResult",
    "HullForm",
    "InfeasibleRelaxation",
    "InstanceError",
    "MetricsRow",
    "MiqpInstance",
    "ReducedProblem",
    "RelaxationSolution",
    "SeparationConfig",
    "SeparationInput",
    "SeparationResult",
    "SolveFailure",
    "SolveReport",
    "VariableDomain",
    "brute_force_oracle",
    "cut_violation",
    "cutting_surface",
    "eta_from_relaxation",
    "evaluate_objective",
    "generate_instance",
    "hull_lower",
    "hull_upper",
    "initial_perturbation",
    "is_feasible",
    "load_instance",
    "relative_gap",
    "rho_init",
    "root_gap",
    "run_batch",
    "save_instance",
    "select_alpha",
    "shifted_geomean",
    "solve",
    "solve_eigenvalue_relaxation",
    "solve_nonsmooth",
    "solve_qcp",
    "solve_qp_child",
    "solve_smooth",
    "surrogate_root_perturbation",
]
