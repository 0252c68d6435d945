"""Convex constrained MDPs in occupancy space, solved by primal-dual policy gradient."""

from .bench import (
    GridworldSpec,
    corridor_share,
    demo_policy,
    make_gridworld,
    make_random_mdp,
    make_standard_cmdp,
    rate_fit,
    run_experiment,
)
from .gradients import (
    GradEstimatorConfig,
    constraint_value,
    exact_grad,
    lagrangian_at,
    reinforce_grad,
    variational_grad,
)
from .mdp import (
    OccupancyMeasure,
    Policy,
    TabularMdp,
    load_mdp,
    occupancy_estimate,
    occupancy_exact,
    rollout,
    rollouts,
)
from .objectives import ConstraintSpec, ObjectiveSpec
from .oracle import OracleSolution, brute_force_policy_grid, duality_check, solve_saddle_fw
from .pdpg import (
    IterateLog,
    PdpgConfig,
    derive_hyperparams,
    problem_constants,
    run_metrics,
    run_pdpg,
    run_pdpg0,
    solve_delta,
)
from .policy import ThetaParams, build_policy, policy_table, project_theta

__all__ = [
    "ConstraintSpec", "GradEstimatorConfig", "GridworldSpec", "IterateLog", "ObjectiveSpec",
    "OccupancyMeasure", "OracleSolution", "PdpgConfig", "Policy", "TabularMdp", "ThetaParams",
    "brute_force_policy_grid", "build_policy", "constraint_value", "corridor_share", "demo_policy",
    "derive_hyperparams", "duality_check", "exact_grad", "lagrangian_at", "load_mdp", "make_gridworld",
    "make_random_mdp", "make_standard_cmdp", "occupancy_estimate", "occupancy_exact", "policy_table",
    "problem_constants", "project_theta", "rate_fit", "reinforce_grad",
    "rollout", "rollouts", "run_experiment", "run_metrics", "run_pdpg", "run_pdpg0",
    "solve_delta", "solve_saddle_fw", "variational_grad",
]
