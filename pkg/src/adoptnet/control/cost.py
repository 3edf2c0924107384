import numpy as np


def stage_cost(a, d, u, spec):
    """``sum_i -Qa a_i^2 + Qd d_i^2 + L u_i^2`` for one time step (or rows)."""
    return np.sum(-spec.Qa * a**2 + spec.Qd * d**2 + spec.L * u**2, axis=-1)


def trajectory_cost(traj, controls, spec):
    """Running cost over ``k = 0..N-1``; the state at ``k = N`` is not charged.

    ``traj`` is a :class:`~adoptnet.dynamics.Trajectory` or any object with
    ``a`` and ``d`` arrays of at least ``N`` rows.
    """
    U = np.atleast_2d(np.asarray(controls, dtype=float))
    N = U.shape[0]
    a = np.asarray(traj.a)[:N]
    d = np.asarray(traj.d)[:N]
    if a.shape[0] != N:
        raise ValueError(f"trajectory has {a.shape[0]} states, need at least {N}")
    return float(np.sum(stage_cost(a, d, U, spec)))


def policy_metrics(traj, controls=None, effort="squared"):
    """Total adopters over the horizon and total control effort.

    ``total_adopters`` sums ``a_i(t)`` over every community and every stored
    time sample.  ``control_cost`` sums ``u_i(t)^2`` (``effort="squared"``)
    or ``|u_i(t)|`` (``effort="linear"``).
    """
    total = float(np.sum(traj.a))
    if controls is None:
        controls = traj.controls()
    U = np.asarray(controls, dtype=float)
    if effort == "squared":
        cost = float(np.sum(U**2))
    elif effort == "linear":
        cost = float(np.sum(np.abs(U)))
    else:
        raise ValueError(f"unknown effort measure {effort!r}")
    return total, cost
