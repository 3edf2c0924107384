"""Receding-horizon (model predictive) control toward a constant-policy
equilibrium."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dynamics import ControlInput, Trajectory, advance, simulate, step, step_jacobian, step_vjp
from ..errors import Infeasible, InfeasibleAtStart, LostFeasibility, NoConvergence, ValidationError
from .cost import stage_cost
from .projection import project_rows
from .spec import PolicyResult


def shifted_candidate(U_star, u_bar):
    """Drop the first control and append ``u_bar``."""
    U = np.atleast_2d(np.asarray(U_star, dtype=float))
    return np.vstack([U[1:], np.asarray(u_bar, dtype=float)[None, :]])


def rollout(state, U, p, channel):
    """Predicted ``(A, D, X)`` arrays of shape ``(N+1, n)`` under ``U``."""
    N, n = U.shape
    A = np.empty((N + 1, n))
    D = np.empty((N + 1, n))
    X = np.empty((N + 1, n))
    A[0], D[0], X[0] = state.a, state.d, state.x
    for k in range(N):
        A[k + 1], D[k + 1], X[k + 1] = advance(A[k], D[k], X[k], p, U[k], channel)
    return A, D, X


class HorizonProblem:
    """Single-shooting objective for one predictive solve.

    ``J(U) = sum_{k<N} l(z_k, u_k) + w ||z_N - z*||^2`` with ``z = (a, d, x)``.
    """

    def __init__(self, state, p, spec, cfg):
        if cfg.target is None:
            raise ValidationError("predictive control needs a target equilibrium", field="target")
        self.state = state
        self.p = p
        self.spec = spec
        self.cfg = cfg
        self.channel = spec.channel
        self.N = int(cfg.horizon)
        self.ub = spec.effective_upper
        t = cfg.target
        self.target = (t.a_star, t.d_star, t.x_star)

    def project(self, U):
        return project_rows(U, self.spec.budget, self.ub)

    def _terminal(self, A, D, X):
        return (A[-1] - self.target[0], D[-1] - self.target[1], X[-1] - self.target[2])

    def deviation(self, A, D, X):
        return float(max(np.abs(e).max() for e in self._terminal(A, D, X)))

    def value(self, U, traj=None):
        A, D, X = traj if traj is not None else rollout(self.state, U, self.p, self.channel)
        running = float(np.sum(stage_cost(A[:-1], D[:-1], U, self.spec)))
        ea, ed, ex = self._terminal(A, D, X)
        return running + self.cfg.terminal_penalty_weight * float(ea @ ea + ed @ ed + ex @ ex)

    def value_and_gradient(self, U):
        """Objective and its gradient by the adjoint recursion."""
        traj = rollout(self.state, U, self.p, self.channel)
        A, D, X = traj
        s, w = self.spec, self.cfg.terminal_penalty_weight
        ea, ed, ex = self._terminal(A, D, X)
        la, ld, lx = 2 * w * ea, 2 * w * ed, 2 * w * ex
        G = np.empty_like(U)
        for k in range(self.N - 1, -1, -1):
            ga, gd, gx, gu = step_vjp(A[k], D[k], X[k], self.p, U[k], self.channel, la, ld, lx)
            G[k] = gu + 2 * s.L * U[k]
            la = ga - 2 * s.Qa * A[k]
            ld = gd + 2 * s.Qd * D[k]
            lx = gx
        return self.value(U, traj), G, traj

    def fd_gradient(self, U, h=1e-6):
        G = np.empty_like(U)
        for idx in np.ndindex(U.shape):
            up, dn = U.copy(), U.copy()
            up[idx] += h
            dn[idx] -= h
            G[idx] = (self.value(up) - self.value(dn)) / (2 * h)
        return G

    def gradient(self, U):
        if self.cfg.solver.finite_differences:
            return self.value(U), self.fd_gradient(U), None
        return self.value_and_gradient(U)

    def stationarity(self, U, G):
        return float(np.abs(U - self.project(U - G)).max())


def terminal_jacobian(problem, U, traj):
    """``d z_N / d U`` as a ``(3n, N*n)`` matrix, by a reverse sweep of the
    step Jacobians."""
    A, D, X = traj
    N, n = U.shape
    Jn = np.empty((3 * n, N * n))
    lam = np.eye(3 * n)
    for k in range(N - 1, -1, -1):
        Jz, Ju = step_jacobian(A[k], D[k], X[k], problem.p, U[k], problem.channel)
        Jn[:, k * n:(k + 1) * n] = lam @ Ju
        lam = lam @ Jz
    return Jn


def _dual_qp(problem, U, gs, e, Jn, d, iters):
    """Solve the SQP subproblem

        min_P  gs'P + P'diag(d)P/2 + w ||e + Jn P||^2   s.t.  U + P feasible

    through its dual in the ``3n`` terminal multipliers ``nu``: for fixed
    ``nu`` the minimiser is a per-step projection in the ``d``-metric, and
    the concave dual is maximised by Newton steps on its generalised
    Hessian.  Returns the step ``P``.
    """
    w = problem.cfg.terminal_penalty_weight
    N, n = U.shape
    C, ub = problem.spec.budget, problem.ub
    Dm = d.reshape(N, n)

    def primal(nu):
        V = U - (gs + Jn.T @ nu).reshape(N, n) / Dm
        return project_rows(V, C, ub, Dm) - U

    def dual(nu, P):
        p = P.ravel()
        val = gs @ p + 0.5 * p @ (d * p) + nu @ (e + Jn @ p) - nu @ nu / (4 * w)
        return val, e + Jn @ p - nu / (2 * w)

    nu = np.zeros(e.size)
    P = primal(nu)
    val, grad = dual(nu, P)
    for _ in range(iters):
        if np.abs(grad).max() <= 1e-13 * (1.0 + np.abs(e).max()):
            break
        Unew = U + P
        free = ((Unew > 1e-14) & (Unew < ub - 1e-14)).ravel()
        fd = np.where(free, 1.0 / d, 0.0)
        H = (Jn * fd) @ Jn.T + np.eye(e.size) / (2 * w)
        rows = Unew.sum(axis=1) >= C - 1e-12
        if rows.any():
            Q = (Jn * fd).reshape(-1, N, n).sum(axis=2)[:, rows]
            mass = fd.reshape(N, n).sum(axis=1)[rows]
            keep = mass > 0
            H -= (Q[:, keep] / mass[keep]) @ Q[:, keep].T
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = grad * 2 * w
        t = 1.0
        while t > 1e-10:
            nu_new = nu + t * step
            P_new = primal(nu_new)
            val_new, grad_new = dual(nu_new, P_new)
            if val_new >= val + 1e-4 * t * (grad @ step):
                break
            t *= 0.5
        else:
            break
        nu, P, val, grad = nu_new, P_new, val_new, grad_new
    return P


def _sqp(problem, U0, max_iters, step_tol, qp_iters, mu=None):
    """SQP for the single-shooting problem.

    The Hessian model is Gauss-Newton on the terminal penalty,
    ``2 w Jn'Jn``, plus a diagonal ``2 L + mu`` for the running cost, where
    the damping ``mu`` is adapted Levenberg-Marquardt style from the
    agreement between predicted and actual decrease.  Steps are safeguarded
    by Armijo backtracking, so every iterate is feasible and the objective
    never increases from the warm start.
    """
    U = problem.project(U0)
    N, n = U.shape
    w = problem.cfg.terminal_penalty_weight
    J, G, traj = problem.value_and_gradient(U)
    if problem.cfg.solver.finite_differences:
        G = problem.fd_gradient(U)
    L2 = np.tile(2 * problem.spec.L, N)
    mu = 1e-2 if mu is None else mu
    kkt = problem.stationarity(U, G)
    it = 0
    converged = kkt <= step_tol
    while not converged and it < max_iters:
        it += 1
        Jn = terminal_jacobian(problem, U, traj)
        e = np.concatenate(problem._terminal(*traj))
        gs = G.ravel() - 2 * w * (Jn.T @ e)
        P = _dual_qp(problem, U, gs, e, Jn, L2 + mu, qp_iters)
        p = P.ravel()
        slope = float(G.ravel() @ p)
        if slope >= 0:
            mu *= 10
            if mu > 1e12:
                break
            continue
        r = e + Jn @ p
        predicted = gs @ p + 0.5 * p @ ((L2 + mu) * p) + w * (r @ r - e @ e)
        t = 1.0
        while True:
            U_new = U + t * P
            J_new = problem.value(U_new)
            if J_new <= J + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-12:
                U_new = None
                break
        if U_new is None:
            mu *= 10
            if mu > 1e12:
                break
            continue
        ratio = (J_new - J) / predicted if predicted < 0 else 0.0
        if t == 1.0 and ratio > 0.75:
            mu = max(mu / 4, 1e-10)
        elif t < 1.0 or ratio < 0.25:
            mu = min(mu * 4, 1e12)
        U = U_new
        J, G, traj = problem.value_and_gradient(U)
        if problem.cfg.solver.finite_differences:
            G = problem.fd_gradient(U)
        kkt = problem.stationarity(U, G)
        converged = kkt <= step_tol
    return U, J, kkt, it, converged, mu


def _solve(state, p, spec, cfg, warm_start, mu=None):
    problem = HorizonProblem(state, p, spec, cfg)
    N, n = problem.N, p.n
    if warm_start is None:
        u_bar = cfg.u_bar if cfg.u_bar is not None else np.zeros(n)
        warm_start = np.tile(np.asarray(u_bar, dtype=float), (N, 1))
    U0 = np.atleast_2d(np.asarray(warm_start, dtype=float))
    if U0.shape != (N, n):
        raise ValidationError(f"warm start has shape {U0.shape}, need {(N, n)}", field="warm_start")
    sv = cfg.solver
    U, J, kkt, it, converged, mu = _sqp(problem, U0, sv.max_iters, sv.step_tol, sv.qp_iters, mu)
    dev = problem.deviation(*rollout(state, U, p, spec.channel))
    res = PolicyResult(
        controls=U,
        cost=J,
        feasible=bool(dev <= cfg.terminal_tolerance),
        iterations=it,
        kkt_residual=kkt,
        equilibrium=cfg.target,
        terminal_deviation=dev,
        converged=bool(converged),
    )
    return res, mu


def mpc_solve(state, p, spec, cfg, warm_start=None, strict=False):
    """One finite-horizon solve from ``state``.

    ``warm_start`` (an ``(N, n)`` sequence) defaults to ``N`` copies of the
    constant policy.  The result is feasible when the predicted terminal
    state lies within ``cfg.terminal_tolerance`` (infinity norm) of the
    target.  With ``strict=True`` an infeasible result raises
    :class:`Infeasible` and an unconverged one :class:`NoConvergence`.
    """
    res, _ = _solve(state, p, spec, cfg, warm_start)
    if strict and not res.feasible:
        raise Infeasible(
            f"terminal deviation {res.terminal_deviation:.3e} exceeds {cfg.terminal_tolerance:g}"
        )
    if strict and not res.converged:
        raise NoConvergence(
            f"SQP stopped after {res.iterations} iterations with stationarity {res.kkt_residual:.3e}"
        )
    return res


def evaluate_sequence(state, p, spec, cfg, U):
    """Cost and terminal deviation of a given sequence, without optimising."""
    problem = HorizonProblem(state, p, spec, cfg)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    traj = rollout(state, U, p, spec.channel)
    return problem.value(U, traj), problem.deviation(*traj)


@dataclass
class ClosedLoop:
    """Receding-horizon run.  Unpacks as ``(trajectory, controls, costs)``."""

    trajectory: Trajectory
    controls: np.ndarray
    costs: np.ndarray
    candidate_feasible: np.ndarray
    candidate_costs: np.ndarray
    terminal_deviations: np.ndarray
    solver_converged: np.ndarray
    lost_feasibility: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.trajectory, self.controls, self.costs))

    @property
    def feasible(self):
        return not self.lost_feasibility


def mpc_run(s0, p, spec, cfg, T, strict=False):
    """Apply the first control of each predictive solve for ``T`` steps.

    Each solve after the first is warm-started with the shifted candidate,
    whose cost and feasibility are recorded before optimising.  An
    infeasible first solve raises :class:`InfeasibleAtStart`.  Later
    infeasible solves are recorded as :class:`LostFeasibility` diagnostics
    (raised instead when ``strict``) and the loop carries on with the
    solver's best sequence.
    """
    if cfg.u_bar is None:
        raise ValidationError("predictive control needs the constant policy u_bar", field="u_bar")
    u_bar = np.asarray(cfg.u_bar, dtype=float)
    n = p.n
    A = np.empty((T + 1, n))
    D = np.empty((T + 1, n))
    X = np.empty((T + 1, n))
    U_applied = np.zeros((T, n))
    costs = np.empty(T)
    cand_ok = np.ones(T, dtype=bool)
    cand_cost = np.full(T, np.nan)
    devs = np.empty(T)
    conv = np.empty(T, dtype=bool)
    lost = []

    state = s0
    A[0], D[0], X[0] = s0.a, s0.d, s0.x
    warm = mu = None
    for t in range(T):
        if warm is not None:
            cand_cost[t], cdev = evaluate_sequence(state, p, spec, cfg, warm)
            cand_ok[t] = cdev <= cfg.terminal_tolerance
        res, mu = _solve(state, p, spec, cfg, warm, mu)
        if not res.feasible:
            if t == 0:
                raise InfeasibleAtStart(
                    f"no control sequence reaches the target from the initial state "
                    f"(terminal deviation {res.terminal_deviation:.3e})"
                )
            err = LostFeasibility(t, res.terminal_deviation)
            if strict:
                raise err
            lost.append(err)
        costs[t] = res.cost
        devs[t] = res.terminal_deviation
        conv[t] = res.converged
        U_applied[t] = res.controls[0]
        state = step(state, p, ControlInput(res.controls[0], spec.channel), step_index=t)
        A[t + 1], D[t + 1], X[t + 1] = state.a, state.d, state.x
        warm = shifted_candidate(res.controls, u_bar)

    traj = Trajectory(A, D, X, U_applied, spec.channel)
    return ClosedLoop(traj, U_applied, costs, cand_ok, cand_cost, devs, conv, lost)


def constant_run(s0, p, spec, u_bar, T):
    """Closed loop under the constant policy, for comparison with MPC."""
    U = np.tile(np.asarray(u_bar, dtype=float), (T, 1))
    return simulate(s0, p, T, U, spec.channel)
