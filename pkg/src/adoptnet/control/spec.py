"""Configuration and result types shared by the constant and predictive
controllers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..analysis import EquilibriumReport
from ..dynamics import Channel, channel_upper_bound
from ..errors import ValidationError


def _weights(name, value, n):
    v = np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy()
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise ValidationError(f"{name} must be finite and nonnegative", field=name)
    return v


@dataclass(frozen=True, eq=False)
class ControlSpec:
    """Channel, per-step budget, cost weights and per-community ceiling."""

    channel: Channel
    budget: float
    Qa: np.ndarray
    Qd: np.ndarray
    L: np.ndarray
    u_upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "channel", Channel.parse(self.channel))
        n = np.asarray(self.u_upper).size
        if not np.isfinite(self.budget) or self.budget < 0:
            raise ValidationError("budget must be a nonnegative real", field="budget")
        for name in ("Qa", "Qd", "L", "u_upper"):
            object.__setattr__(self, name, _weights(name, getattr(self, name), n))

    @classmethod
    def for_params(cls, p, channel, budget, Qa=1.0, Qd=0.1, L=0.1, adoption_cap=1.0, u_upper=None):
        channel = Channel.parse(channel)
        if u_upper is None:
            u_upper = channel_upper_bound(p, channel, adoption_cap)
        n = p.n
        return cls(channel, float(budget), _weights("Qa", Qa, n), _weights("Qd", Qd, n),
                   _weights("L", L, n), np.asarray(u_upper, dtype=float))

    @property
    def n(self):
        return self.u_upper.size

    @property
    def effective_upper(self):
        return np.minimum(self.u_upper, self.budget)

    def is_admissible(self, u, slack=1e-9):
        u = np.atleast_2d(u)
        return bool(
            np.all(u >= -slack)
            and np.all(u <= self.u_upper + slack)
            and np.all(u.sum(axis=1) <= self.budget + slack)
        )

    def to_dict(self):
        return {
            "channel": self.channel.value,
            "budget": self.budget,
            "Qa": self.Qa.tolist(),
            "Qd": self.Qd.tolist(),
            "L": self.L.tolist(),
            "u_upper": self.u_upper.tolist(),
        }


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 200
    step_tol: float = 1e-6
    finite_differences: bool = False
    qp_iters: int = 50


@dataclass(frozen=True, eq=False)
class MpcConfig:
    """Receding-horizon settings.

    ``target`` is the equilibrium induced by the constant policy ``u_bar``;
    both normally come from :func:`solve_ccp`.
    """

    horizon: int = 20
    terminal_tolerance: float = 0.05
    terminal_penalty_weight: float = 1e3
    solver: SolverConfig = field(default_factory=SolverConfig)
    target: Optional[EquilibriumReport] = None
    u_bar: Optional[np.ndarray] = None

    def __post_init__(self):
        if int(self.horizon) < 1:
            raise ValidationError("horizon must be at least 1", field="horizon")
        if self.terminal_tolerance <= 0 or self.terminal_penalty_weight <= 0:
            raise ValidationError("tolerances and penalty weight must be positive")
        if self.solver.step_tol <= 0:
            raise ValidationError("solver step tolerance must be positive")

    def to_dict(self):
        return {
            "horizon": self.horizon,
            "terminal_tolerance": self.terminal_tolerance,
            "terminal_penalty_weight": self.terminal_penalty_weight,
            "solver": {
                "max_iters": self.solver.max_iters,
                "step_tol": self.solver.step_tol,
                "finite_differences": self.solver.finite_differences,
                "qp_iters": self.solver.qp_iters,
            },
        }


@dataclass(frozen=True, eq=False)
class PolicyResult:
    """Outcome of a constant-policy or finite-horizon solve.

    ``controls`` is the constant vector ``u_bar`` (shape ``(n,)``) for the
    constant policy and the ``(N, n)`` sequence for a predictive solve.
    """

    controls: np.ndarray
    cost: float
    feasible: bool
    iterations: int
    kkt_residual: float
    equilibrium: Optional[EquilibriumReport] = None
    terminal_deviation: float = float("nan")
    converged: bool = True
    message: str = ""

    @property
    def u_bar(self):
        return self.controls

    @property
    def U_star(self):
        return self.controls

    def to_dict(self):
        return {
            "controls": np.asarray(self.controls).tolist(),
            "cost": self.cost,
            "feasible": self.feasible,
            "iterations": self.iterations,
            "kkt_residual": self.kkt_residual,
            "terminal_deviation": self.terminal_deviation,
            "converged": self.converged,
            "message": self.message,
            "equilibrium": self.equilibrium.to_dict() if self.equilibrium else None,
        }
