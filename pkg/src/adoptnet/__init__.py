"""Simulation, analysis and control of the coupled adoption-opinion model."""
from .analysis import (
    EquilibriumKind,
    EquilibriumReport,
    Verdict,
    adoption_free_equilibrium,
    certify,
    diffused_equilibrium,
    jacobian_radius,
    opinion_bounds,
    psi,
    r0,
    r0_extremes,
    stability_constants,
)
from .control import (
    ControlSpec,
    MpcConfig,
    PolicyResult,
    SolverConfig,
    constant_run,
    mpc_run,
    mpc_solve,
    policy_metrics,
    project_budget_box,
    solve_ccp,
)
from .dynamics import Channel, ControlInput, ModelParams, State, Trajectory, simulate, step
from .network import Network, build_network, random_strongly_connected, spectral_radius
from .scenario_io import Scenario, figure_scenario, load_scenario, random_scenario, save_scenario, write_outputs

__all__ = [
    "Channel",
    "ControlInput",
    "ControlSpec",
    "EquilibriumKind",
    "EquilibriumReport",
    "ModelParams",
    "MpcConfig",
    "Network",
    "PolicyResult",
    "Scenario",
    "SolverConfig",
    "State",
    "Trajectory",
    "Verdict",
    "adoption_free_equilibrium",
    "build_network",
    "certify",
    "constant_run",
    "diffused_equilibrium",
    "figure_scenario",
    "jacobian_radius",
    "load_scenario",
    "mpc_run",
    "mpc_solve",
    "opinion_bounds",
    "policy_metrics",
    "project_budget_box",
    "psi",
    "r0",
    "r0_extremes",
    "random_scenario",
    "save_scenario",
    "simulate",
    "solve_ccp",
    "spectral_radius",
    "stability_constants",
    "step",
    "write_outputs",
]
