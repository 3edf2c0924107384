"""Constant and receding-horizon control of the adoption model."""
from .ccp import CcpProblem, ccp_cost, solve_ccp
from .cost import policy_metrics, stage_cost, trajectory_cost
from .mpc import ClosedLoop, HorizonProblem, constant_run, evaluate_sequence, mpc_run, mpc_solve, rollout, shifted_candidate
from .projection import project_budget_box, project_rows
from .spec import ControlSpec, MpcConfig, PolicyResult, SolverConfig

__all__ = [
    "CcpProblem",
    "ClosedLoop",
    "ControlSpec",
    "HorizonProblem",
    "MpcConfig",
    "PolicyResult",
    "SolverConfig",
    "ccp_cost",
    "constant_run",
    "evaluate_sequence",
    "mpc_run",
    "mpc_solve",
    "policy_metrics",
    "project_budget_box",
    "project_rows",
    "rollout",
    "shifted_candidate",
    "solve_ccp",
    "stage_cost",
    "trajectory_cost",
]
